use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use vocalmap::corpus::SynthConfig;
use vocalmap::model::ModelConfig;
use vocalmap::project::TsneConfig;
use vocalmap::train::{Preset, TrainConfig};

use crate::invalid;

/// Every tunable of a run. Sections missing from the config file keep their
/// defaults; fields given on the command line win over both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub preset: Option<Preset>,
    pub max_seconds: Option<f64>,
    pub split_ratios: [f64; 3],
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub tsne: TsneConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            preset: None,
            max_seconds: None,
            split_ratios: [0.8, 0.1, 0.1],
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            tsne: TsneConfig::default(),
        }
    }
}

fn merge(base: &mut Value, overlay: &Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

impl RunConfig {
    /// Defaults, then the preset's training block, then the file.
    pub fn load(path: Option<&Path>, preset: Option<Preset>) -> anyhow::Result<Self> {
        let file: Value = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))?
            }
            None => Value::Object(Default::default()),
        };
        let preset = match preset {
            Some(p) => Some(p),
            None => match file.get("preset") {
                Some(v) if !v.is_null() => Some(
                    serde_json::from_value(v.clone()).map_err(|e| invalid(format!("config preset: {e}")))?,
                ),
                _ => None,
            },
        };
        let mut base = serde_json::to_value(RunConfig {
            preset,
            train: preset.map(TrainConfig::preset).unwrap_or_default(),
            ..RunConfig::default()
        })
        .expect("config serializes");
        merge(&mut base, &file);
        let mut cfg: RunConfig = serde_json::from_value(base).map_err(|e| invalid(format!("config: {e}")))?;
        cfg.preset = preset;
        Ok(cfg)
    }

    pub fn validate(&mut self) -> anyhow::Result<()> {
        self.model.backbone_trainable = self.train.backbone_trainable;
        self.model.validate().map_err(|e| invalid(e.to_string()))?;
        self.train.validate().map_err(|e| invalid(e.to_string()))?;
        let sum: f64 = self.split_ratios.iter().sum();
        if self.split_ratios.iter().any(|r| !(*r > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("split ratios {:?} must be positive and sum to 1", self.split_ratios)));
        }
        if let Some(t) = self.max_seconds {
            if !(t > 0.0) {
                return Err(invalid(format!("max_seconds must be positive, got {t}")));
            }
        }
        Ok(())
    }

    /// Duration features are padded or truncated to.
    pub fn max_seconds(&self) -> f64 {
        self.max_seconds.unwrap_or(self.model.max_frames as f64 / 100.0)
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve_their_training_block() {
        let f = RunConfig::load(None, Some(Preset::Freeze)).unwrap();
        assert_eq!((f.train.learning_rate, f.train.epochs, f.train.early_stopping_patience), (0.001, 10, 5));
        let t = RunConfig::load(None, Some(Preset::Finetune)).unwrap();
        assert_eq!((t.train.learning_rate, t.train.epochs, t.train.early_stopping_patience), (0.00025, 40, 8));
    }

    #[test]
    fn file_fields_override_preset_but_keep_the_rest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"train": {"epochs": 3}, "model": {"layers": 2}}"#).unwrap();
        let c = RunConfig::load(Some(&p), Some(Preset::Freeze)).unwrap();
        assert_eq!((c.train.epochs, c.train.learning_rate, c.model.layers, c.model.embed_dim), (3, 0.001, 2, 64));
    }

    #[test]
    fn bad_ratios_are_invalid() {
        let mut c = RunConfig {
            split_ratios: [0.8, 0.1, 0.2],
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
    }
}

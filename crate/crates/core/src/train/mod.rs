//! Training loop, evaluation metrics and the cross-model case taxonomy.

mod data;
mod metrics;
mod schedule;

pub use data::{featurize_corpus, FeatureSet};

pub use metrics::{case_label, confusion, evaluate, per_class_recall, roc_auc, uar, CaseLabel, Metrics, RocCurve};
pub use schedule::{Adam, LinearSchedule};

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::Spectrogram;
use crate::grad::{softmax, Tape, Tensor, Var};
use crate::model::{forward_patches, patchify, tail_index, ModelConfig, ModelError, Parameters, Patches};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grad(#[from] crate::grad::GradError),
    #[error(transparent)]
    Dsp(#[from] crate::dsp::DspError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error("metric: {0}")]
    Metric(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    NonFinite { epoch: usize, step: usize, loss: f64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A normalized, padded spectrogram with its binary label.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub spec: Spectrogram,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Freeze,
    Finetune,
}

impl std::str::FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "freeze" => Ok(Preset::Freeze),
            "finetune" => Ok(Preset::Finetune),
            other => Err(format!("unknown preset {other:?} (expected freeze or finetune)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub grad_accumulation: usize,
    pub epochs: usize,
    pub warmup_ratio: f64,
    pub early_stopping_patience: usize,
    pub early_stopping_threshold: f64,
    pub seed: u64,
    pub backbone_trainable: bool,
    /// Weight each sample's loss by `n / (2·n_class)`.
    pub class_weighting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::preset(Preset::Finetune)
    }
}

impl TrainConfig {
    pub fn preset(preset: Preset) -> Self {
        let (learning_rate, epochs, early_stopping_patience, backbone_trainable) = match preset {
            Preset::Freeze => (0.001, 10, 5, false),
            Preset::Finetune => (0.00025, 40, 8, true),
        };
        Self {
            learning_rate,
            batch_size: 8,
            grad_accumulation: 4,
            epochs,
            warmup_ratio: 0.1,
            early_stopping_patience,
            early_stopping_threshold: 0.0,
            seed: 0,
            backbone_trainable,
            class_weighting: false,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.grad_accumulation == 0 || self.epochs == 0 || self.early_stopping_patience == 0 {
            return bad("batch_size, grad_accumulation, epochs and patience must be positive".into());
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return bad(format!("warmup_ratio must be in [0, 1), got {}", self.warmup_ratio));
        }
        if self.early_stopping_threshold.is_nan() || self.early_stopping_threshold < 0.0 {
            return bad("early_stopping_threshold must be ≥ 0".into());
        }
        Ok(())
    }

    pub fn samples_per_step(&self) -> usize {
        self.batch_size * self.grad_accumulation
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_uar: f64,
    pub dev_auc: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EpochCap,
    EarlyStopping,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best dev-UAR epoch.
    pub params: Parameters,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_uar: f64,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    /// Softmax probability of class 1.
    pub score: f64,
    pub logits: Vec<f64>,
    pub cls: Vec<f64>,
}

fn prediction_from_logits(logits: Vec<f64>, cls: Vec<f64>) -> Prediction {
    let probs = softmax(&logits);
    Prediction {
        class: crate::model::argmax(&logits),
        score: probs[1],
        logits,
        cls,
    }
}

/// Forward-only inference, parallel across samples.
pub fn predict(samples: &[Sample], params: &Parameters, config: &ModelConfig) -> Result<Vec<Prediction>, TrainError> {
    samples
        .par_iter()
        .map(|s| {
            let patches = patchify(&s.spec, config, 0.0)?;
            let t = forward_patches(&patches, params, config)?;
            Ok(prediction_from_logits(t.logits().to_vec(), t.cls_representation().to_vec()))
        })
        .collect()
}

pub fn metrics_for(samples: &[Sample], preds: &[Prediction]) -> Result<Metrics, TrainError> {
    let truth: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let pred: Vec<usize> = preds.iter().map(|p| p.class).collect();
    let scores: Vec<f64> = preds.iter().map(|p| p.score).collect();
    evaluate(&truth, &pred, &scores)
}

/// Head-only logits from a cached CLS representation.
fn head_logits(cls: &[f64], params: &Parameters, config: &ModelConfig) -> Vec<f64> {
    let [.., hw, hb] = tail_index(config);
    let (w, b) = (&params.tensors[hw], &params.tensors[hb]);
    (0..config.num_classes)
        .map(|c| b.get(0, c) + cls.iter().enumerate().map(|(i, x)| x * w.get(i, c)).sum::<f64>())
        .collect()
}

enum Inputs {
    /// Full model on patches.
    Patches(Vec<Patches>),
    /// Cached CLS vectors for head-only training.
    Features(Vec<Vec<f64>>),
}

/// Loss and gradients (for `trainable` tensors) of one sample.
fn sample_gradient(
    inputs: &Inputs,
    index: usize,
    label: usize,
    params: &Parameters,
    config: &ModelConfig,
    trainable: &[usize],
) -> Result<(f64, Vec<Tensor>), TrainError> {
    match inputs {
        Inputs::Patches(all) => {
            let mut trace = forward_patches(&all[index], params, config)?;
            let loss = trace.tape.cross_entropy(trace.logits, label)?;
            let grads = trace.tape.backward(loss)?;
            let value = trace.tape.value(loss).data()[0];
            let out = trainable.iter().map(|&k| grads.get_or_zeros(&trace.tape, trace.params[k])).collect();
            Ok((value, out))
        }
        Inputs::Features(all) => {
            let [.., hw, hb] = tail_index(config);
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::row_vector(all[index].clone()));
            let w: Var = tape.leaf(params.tensors[hw].clone());
            let b: Var = tape.leaf(params.tensors[hb].clone());
            let y = tape.matmul(x, w)?;
            let y = tape.add_row(y, b)?;
            let loss = tape.cross_entropy(y, label)?;
            let grads = tape.backward(loss)?;
            let value = tape.value(loss).data()[0];
            Ok((value, vec![grads.get_or_zeros(&tape, w), grads.get_or_zeros(&tape, b)]))
        }
    }
}

/// Trains from `init` and returns the best-dev parameters.
///
/// Each optimizer step consumes `batch_size · grad_accumulation` samples
/// and uses their mean gradient. Per-sample gradients are computed in
/// parallel and summed in sample order, so results do not depend on the
/// thread count. With the backbone frozen, CLS vectors are computed once
/// and only the head is optimized.
pub fn train(
    init: &Parameters,
    model: &ModelConfig,
    config: &TrainConfig,
    train_set: &[Sample],
    dev_set: &[Sample],
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    model.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if dev_set.is_empty() {
        return Err(TrainError::EmptySplit("dev"));
    }
    let mut params = init.clone();
    let [.., hw, hb] = tail_index(model);
    let trainable: Vec<usize> = if config.backbone_trainable {
        (0..params.tensors.len()).collect()
    } else {
        vec![hw, hb]
    };

    let inputs = if config.backbone_trainable {
        let patches = train_set
            .par_iter()
            .map(|s| patchify(&s.spec, model, 0.0))
            .collect::<Result<Vec<_>, _>>()?;
        Inputs::Patches(patches)
    } else {
        Inputs::Features(predict(train_set, &params, model)?.into_iter().map(|p| p.cls).collect())
    };
    let dev_features = if config.backbone_trainable {
        None
    } else {
        Some(predict(dev_set, &params, model)?)
    };

    let weights = if config.class_weighting {
        let pos = train_set.iter().filter(|s| s.label == 1).count();
        let n = train_set.len() as f64;
        let w = |k: usize| if k == 0 { 1.0 } else { n / (2.0 * k as f64) };
        [w(train_set.len() - pos), w(pos)]
    } else {
        [1.0, 1.0]
    };

    let per_step = config.samples_per_step();
    let steps_per_epoch = train_set.len().div_ceil(per_step);
    let schedule = LinearSchedule::new(config.learning_rate, config.warmup_ratio, steps_per_epoch * config.epochs);
    let mut adam = Adam::new(trainable.iter().map(|&k| params.tensors[k].len()));

    let mut history = Vec::new();
    let mut best: Option<(usize, f64, Parameters)> = None;
    let mut stale = 0;
    let mut stop_reason = StopReason::EpochCap;
    let mut step = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for chunk in order.chunks(per_step) {
            let results = chunk
                .par_iter()
                .map(|&i| {
                    let (loss, grads) = sample_gradient(&inputs, i, train_set[i].label, &params, model, &trainable)?;
                    Ok((loss * weights[train_set[i].label], grads, weights[train_set[i].label]))
                })
                .collect::<Result<Vec<_>, TrainError>>()?;
            let mut total: Vec<Tensor> = trainable
                .iter()
                .map(|&k| Tensor::zeros(params.tensors[k].rows(), params.tensors[k].cols()))
                .collect();
            let mut step_loss = 0.0;
            for (loss, grads, w) in &results {
                step_loss += loss;
                for (t, g) in total.iter_mut().zip(grads) {
                    if *w == 1.0 {
                        t.add_assign(g);
                    } else {
                        t.add_assign(&g.map(|v| v * w));
                    }
                }
            }
            if !step_loss.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    step,
                    loss: step_loss,
                });
            }
            loss_sum += step_loss;
            let scale = 1.0 / chunk.len() as f64;
            for t in &mut total {
                for v in t.data_mut() {
                    *v *= scale;
                }
            }
            lr = schedule.lr(step);
            {
                let mut views: Vec<&mut [f64]> = params
                    .tensors
                    .iter_mut()
                    .enumerate()
                    .filter(|(k, _)| trainable.contains(k))
                    .map(|(_, t)| t.data_mut())
                    .collect();
                let grads: Vec<&[f64]> = total.iter().map(Tensor::data).collect();
                adam.update(&mut views, &grads, lr);
            }
            for &k in &trainable {
                for v in params.tensors[k].data_mut() {
                    *v = f64::from(*v as f32);
                }
            }
            step += 1;
        }

        let dev_preds = match &dev_features {
            Some(cached) => cached
                .iter()
                .map(|p| prediction_from_logits(head_logits(&p.cls, &params, model), p.cls.clone()))
                .collect(),
            None => predict(dev_set, &params, model)?,
        };
        let m = metrics_for(dev_set, &dev_preds)?;
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / train_set.len() as f64,
            dev_uar: m.uar,
            dev_auc: m.auc,
            lr,
        };
        log::info!(
            "epoch {} loss {:.4} dev uar {:.4} auc {:.4} lr {:.2e}",
            record.epoch,
            record.train_loss,
            record.dev_uar,
            record.dev_auc,
            record.lr
        );
        history.push(record);

        let improved = match &best {
            None => true,
            Some((_, b, _)) => m.uar > *b && m.uar - *b > config.early_stopping_threshold,
        };
        if improved {
            best = Some((epoch + 1, m.uar, params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.early_stopping_patience {
                stop_reason = StopReason::EarlyStopping;
                break;
            }
        }
    }
    let (best_epoch, best_dev_uar, params) = best.expect("at least one epoch ran");
    log::info!("stopped by {stop_reason:?}; best epoch {best_epoch} (dev uar {best_dev_uar:.4})");
    Ok(TrainOutcome {
        params,
        history,
        best_epoch,
        best_dev_uar,
        stop_reason,
    })
}

/// One JSON object per line.
pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<(), TrainError> {
    let io = |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for r in history {
        writeln!(f, "{}", serde_json::to_string(r).expect("record serializes")).map_err(io)?;
    }
    f.flush().map_err(io)
}

//! Spectrogram-patch transformer: patch embedding with a CLS token and
//! learned positions, pre-norm encoder layers, and a linear head.

mod checkpoint;
mod forward;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub(crate) use forward::argmax;
pub use forward::{embed, encode, forward, forward_on_tape, forward_patches, ForwardTrace, Recorded};
pub use params::{init_params, layer_index, layout, param_count, tail_index, Init, LayerIndex, ParamSpec, Parameters};

use serde::{Deserialize, Serialize};

use crate::dsp::Spectrogram;
use crate::grad::{GradError, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error("shape: {0}")]
    Shape(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("checkpoint truncated or has trailing bytes")]
    Truncated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// Patch extent along frequency (bins).
    pub patch_h: usize,
    /// Patch extent along time (frames).
    pub patch_w: usize,
    /// Hop between patch columns along time.
    pub stride: usize,
    pub mel_bins: usize,
    pub max_frames: usize,
    pub num_classes: usize,
    pub backbone_trainable: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            layers: 4,
            heads: 4,
            patch_h: 16,
            patch_w: 16,
            stride: 16,
            mel_bins: 128,
            max_frames: 150,
            num_classes: 2,
            backbone_trainable: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.embed_dim == 0 || self.layers == 0 || self.heads == 0 || self.num_classes < 2 {
            return err(format!("embed_dim, layers, heads must be positive and num_classes ≥ 2: {self:?}"));
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return err(format!("embed_dim {} not divisible by heads {}", self.embed_dim, self.heads));
        }
        if self.patch_h == 0 || self.patch_w == 0 || !self.mel_bins.is_multiple_of(self.patch_h) {
            return err(format!("mel_bins {} not divisible by patch height {}", self.mel_bins, self.patch_h));
        }
        if self.stride == 0 || self.stride > self.patch_w {
            return err(format!("stride {} must be in 1..={}", self.stride, self.patch_w));
        }
        if self.max_frames == 0 {
            return err("max_frames must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn mlp_dim(&self) -> usize {
        4 * self.embed_dim
    }

    pub fn patch_area(&self) -> usize {
        self.patch_h * self.patch_w
    }

    pub fn grid_rows(&self) -> usize {
        self.mel_bins / self.patch_h
    }

    pub fn grid_cols(&self, frames: usize) -> usize {
        frames.div_ceil(self.stride).max(1)
    }

    /// Frames after right-padding so the last patch column fits.
    pub fn padded_frames(&self, frames: usize) -> usize {
        (self.grid_cols(frames) - 1) * self.stride + self.patch_w
    }

    /// Positional table capacity (excluding CLS).
    pub fn num_patches(&self) -> usize {
        self.grid_rows() * self.grid_cols(self.max_frames)
    }
}

/// Flattened patches, one per row, in time-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Patches {
    pub data: Tensor,
    pub rows: usize,
    pub cols: usize,
    /// Frames covered after padding.
    pub padded_frames: usize,
}

impl Patches {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Cuts `spec` into `patch_h × patch_w` patches. Frames are right-padded
/// with `fill`; patch `k` sits at grid row `k % rows`, column `k / rows`.
pub fn patchify(spec: &Spectrogram, config: &ModelConfig, fill: f64) -> Result<Patches, ModelError> {
    if spec.bins() != config.mel_bins {
        return Err(ModelError::Config(format!(
            "spectrogram has {} mel bins, model expects {}",
            spec.bins(),
            config.mel_bins
        )));
    }
    let frames = spec.frames();
    let (rows, cols) = (config.grid_rows(), config.grid_cols(frames));
    let padded = config.padded_frames(frames);
    let (ph, pw) = (config.patch_h, config.patch_w);
    let mut data = Tensor::zeros(rows * cols, ph * pw);
    for c in 0..cols {
        for r in 0..rows {
            let out = data.row_mut(c * rows + r);
            for i in 0..ph {
                for j in 0..pw {
                    let f = c * config.stride + j;
                    out[i * pw + j] = if f < frames { spec.get(r * ph + i, f) } else { fill };
                }
            }
        }
    }
    Ok(Patches {
        data,
        rows,
        cols,
        padded_frames: padded,
    })
}

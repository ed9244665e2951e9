//! Gradient-weighted attention rollout.
//!
//! For a chosen class `t`, each layer's attention `A` (per head) and its
//! gradient `∂y_t/∂A` give `Ā = mean_h( max(0, ∇A ⊙ A) )`. Starting from the
//! identity, `R ← R + Ā·R` is applied layer by layer. The CLS row of the
//! final `R` (without the CLS column) scores each patch; the scores are laid
//! back onto the patch grid, bilinearly upsampled to the padded
//! spectrogram, truncated to the unpadded length and min-max normalized.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dsp::{read_matrix_file, write_matrix_file, DspError, MatrixFile, Spectrogram, RMAP_MAGIC};
use crate::grad::{attention_grads, GradError, Tensor};
use crate::model::{forward, ModelConfig, ModelError, Parameters};

#[derive(Debug, thiserror::Error)]
pub enum RolloutError {
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("{path}: {message}")]
    Sidecar { path: PathBuf, message: String },
}

/// `Ā` for one layer. Entries are non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerAttribution {
    pub a_bar: Tensor,
}

/// Head mean of the positive part of `∇A ⊙ A`.
pub fn head_aggregate(attention: &[Tensor], gradient: &[Tensor]) -> Result<LayerAttribution, RolloutError> {
    if attention.is_empty() || attention.len() != gradient.len() {
        return Err(RolloutError::Shape(format!(
            "{} attention heads but {} gradient heads",
            attention.len(),
            gradient.len()
        )));
    }
    let shape = attention[0].shape();
    if shape[0] != shape[1] {
        return Err(RolloutError::Shape(format!("attention must be square, got {shape:?}")));
    }
    let mut a_bar = Tensor::zeros(shape[0], shape[1]);
    for (a, g) in attention.iter().zip(gradient) {
        if a.shape() != shape || g.shape() != shape {
            return Err(RolloutError::Shape(format!(
                "head shapes {:?} / {:?} differ from {shape:?}",
                a.shape(),
                g.shape()
            )));
        }
        for ((o, &av), &gv) in a_bar.data_mut().iter_mut().zip(a.data()).zip(g.data()) {
            *o += (gv * av).max(0.0);
        }
    }
    let heads = attention.len() as f64;
    for o in a_bar.data_mut() {
        *o /= heads;
    }
    Ok(LayerAttribution { a_bar })
}

/// `R_0 = I`, `R_l = R_{l-1} + Ā_l · R_{l-1}`; returns every `R_l`
/// including `R_0`.
pub fn rollout_steps(layers: &[LayerAttribution], tokens: usize) -> Result<Vec<Tensor>, RolloutError> {
    let mut steps = vec![Tensor::identity(tokens)];
    for (l, layer) in layers.iter().enumerate() {
        if layer.a_bar.shape() != [tokens, tokens] {
            return Err(RolloutError::Shape(format!(
                "layer {l} is {:?}, expected {tokens}×{tokens}",
                layer.a_bar.shape()
            )));
        }
        let prev = steps.last().expect("starts with identity");
        let mut next = layer.a_bar.matmul(prev).expect("square shapes checked");
        next.add_assign(prev);
        steps.push(next);
    }
    Ok(steps)
}

pub fn rollout(layers: &[LayerAttribution], tokens: usize) -> Result<Tensor, RolloutError> {
    Ok(rollout_steps(layers, tokens)?.pop().expect("non-empty"))
}

/// Row 0 of `R` without its first entry.
pub fn cls_relevance(r: &Tensor) -> Result<Vec<f64>, RolloutError> {
    let [rows, cols] = r.shape();
    if rows != cols || rows < 2 {
        return Err(RolloutError::Shape(format!("relevance must be square with ≥ 2 tokens, got {:?}", r.shape())));
    }
    Ok(r.row(0)[1..].to_vec())
}

/// Patch scores mapped onto the time–frequency plane.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceMap {
    pub patch_scores: Vec<f64>,
    /// (rows, cols) of the patch grid.
    pub grid: (usize, usize),
    pub padded_frames: usize,
    /// Upsampled scores before truncation, `bins × padded_frames`, bin-major.
    pub pixels: Vec<f64>,
    bins: usize,
    frames: usize,
    /// Final map in [0, 1], `bins × frames`, bin-major.
    values: Vec<f64>,
}

impl RelevanceMap {
    /// A bare map with no patch-level provenance (e.g. loaded from disk).
    pub fn from_values(bins: usize, frames: usize, values: Vec<f64>) -> Result<Self, RolloutError> {
        if values.len() != bins * frames {
            return Err(RolloutError::Shape(format!(
                "{} values for a {bins}×{frames} map",
                values.len()
            )));
        }
        Ok(Self {
            patch_scores: Vec::new(),
            grid: (0, 0),
            padded_frames: frames,
            pixels: values.clone(),
            bins,
            frames,
            values,
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Unpadded frame count.
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.values[bin * self.frames + frame]
    }

    pub fn pixel(&self, bin: usize, frame: usize) -> f64 {
        self.pixels[bin * self.padded_frames + frame]
    }
}

/// Corner-aligned bilinear resize of a row-major `rows × cols` grid.
pub fn bilinear_upsample(grid: &[f64], rows: usize, cols: usize, height: usize, width: usize) -> Vec<f64> {
    let coord = |i: usize, out: usize, src: usize| -> (usize, usize, f64) {
        if out <= 1 || src <= 1 {
            return (0, 0, 0.0);
        }
        let x = i as f64 * (src - 1) as f64 / (out - 1) as f64;
        let lo = (x.floor() as usize).min(src - 1);
        let hi = (lo + 1).min(src - 1);
        (lo, hi, x - lo as f64)
    };
    let mut out = vec![0.0; height * width];
    for y in 0..height {
        let (y0, y1, fy) = coord(y, height, rows);
        for x in 0..width {
            let (x0, x1, fx) = coord(x, width, cols);
            let g = |r: usize, c: usize| grid[r * cols + c];
            // a + (b - a)·f stays exact when a == b
            let top = g(y0, x0) + (g(y0, x1) - g(y0, x0)) * fx;
            let bottom = g(y1, x0) + (g(y1, x1) - g(y1, x0)) * fx;
            out[y * width + x] = top + (bottom - top) * fy;
        }
    }
    out
}

/// Min-max normalization; a constant input becomes all zeros.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; values.len()]
    }
}

/// Lays `scores` (time-major patch order) onto a `rows × cols` grid,
/// upsamples to `bins × padded_frames`, keeps the first `original_frames`
/// columns and normalizes.
pub fn to_map(
    scores: &[f64],
    grid: (usize, usize),
    bins: usize,
    padded_frames: usize,
    original_frames: usize,
) -> Result<RelevanceMap, RolloutError> {
    let (rows, cols) = grid;
    if scores.len() != rows * cols {
        return Err(RolloutError::Shape(format!(
            "{} scores for a {rows}×{cols} grid",
            scores.len()
        )));
    }
    if original_frames == 0 || original_frames > padded_frames {
        return Err(RolloutError::Shape(format!(
            "original length {original_frames} must be in 1..={padded_frames}"
        )));
    }
    let mut grid_values = vec![0.0; rows * cols];
    for (k, &s) in scores.iter().enumerate() {
        grid_values[(k % rows) * cols + k / rows] = s;
    }
    let pixels = bilinear_upsample(&grid_values, rows, cols, bins, padded_frames);
    let truncated: Vec<f64> = (0..bins)
        .flat_map(|b| pixels[b * padded_frames..b * padded_frames + original_frames].iter().copied())
        .collect();
    Ok(RelevanceMap {
        patch_scores: scores.to_vec(),
        grid,
        padded_frames,
        pixels,
        bins,
        frames: original_frames,
        values: min_max_normalize(&truncated),
    })
}

#[derive(Debug, Clone)]
pub struct Explanation {
    pub map: RelevanceMap,
    pub predicted_class: usize,
    pub class_explained: usize,
    pub logits: Vec<f64>,
    pub layers: Vec<LayerAttribution>,
    /// `R_0 … R_L`
    pub steps: Vec<Tensor>,
}

/// Full pipeline for one spectrogram. `class` defaults to the prediction.
pub fn explain(
    spec: &Spectrogram,
    params: &Parameters,
    config: &ModelConfig,
    class: Option<usize>,
) -> Result<Explanation, RolloutError> {
    let trace = forward(spec, params, config)?;
    let predicted = trace.predicted_class();
    let target = class.unwrap_or(predicted);
    let per_layer = attention_grads(&trace.tape, trace.logits, target)?;
    let layers = per_layer
        .iter()
        .map(|l| head_aggregate(&l.attention, &l.gradient))
        .collect::<Result<Vec<_>, _>>()?;
    let tokens = trace.tape.value(trace.tokens).rows();
    let steps = rollout_steps(&layers, tokens)?;
    let scores = cls_relevance(steps.last().expect("non-empty"))?;
    let original = spec.original_frames.min(spec.frames());
    let map = to_map(&scores, trace.grid, spec.bins(), trace.padded_frames, original)?;
    Ok(Explanation {
        map,
        predicted_class: predicted,
        class_explained: target,
        logits: trace.logits().to_vec(),
        layers,
        steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSidecar {
    pub id: String,
    pub predicted_class: usize,
    pub class_explained: usize,
    pub logits: Vec<f64>,
}

/// Writes the final map as an RMAP matrix file and a JSON sidecar next to
/// it (same stem, `.json`).
pub fn export_map(path: &Path, id: &str, explanation: &Explanation) -> Result<(), RolloutError> {
    let map = &explanation.map;
    let file = MatrixFile {
        magic: RMAP_MAGIC,
        bins: map.bins,
        frames: map.frames,
        original_frames: map.frames,
        values: map.values.iter().map(|&v| v as f32).collect(),
    };
    write_matrix_file(path, &file)?;
    let sidecar = MapSidecar {
        id: id.to_string(),
        predicted_class: explanation.predicted_class,
        class_explained: explanation.class_explained,
        logits: explanation.logits.clone(),
    };
    let json_path = path.with_extension("json");
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    std::fs::write(&json_path, text).map_err(|e| RolloutError::Sidecar {
        path: json_path.clone(),
        message: e.to_string(),
    })
}

pub fn load_map(path: &Path) -> Result<RelevanceMap, RolloutError> {
    let file = read_matrix_file(path, RMAP_MAGIC)?;
    let values = file.values.iter().map(|&v| f64::from(v)).collect();
    RelevanceMap::from_values(file.bins, file.frames, values)
}

pub fn load_sidecar(path: &Path) -> Result<MapSidecar, RolloutError> {
    let json_path = path.with_extension("json");
    let err = |message: String| RolloutError::Sidecar {
        path: json_path.clone(),
        message,
    };
    let text = std::fs::read_to_string(&json_path).map_err(|e| err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| err(e.to_string()))
}

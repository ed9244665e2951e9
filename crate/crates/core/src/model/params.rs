use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, ModelError};
use crate::grad::Tensor;

/// Per-layer tensors, in declaration order.
pub const LAYER_PARAMS: [&str; 16] = [
    "ln1.gain", "ln1.bias", "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv", "attn.wo", "attn.bo",
    "ln2.gain", "ln2.bias", "mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2",
];
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    TruncNormal,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
    pub backbone: bool,
}

/// Index of each tensor in [`Parameters::tensors`].
#[derive(Debug, Clone, Copy)]
pub struct LayerIndex {
    pub ln1_gain: usize,
    pub ln1_bias: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_gain: usize,
    pub ln2_bias: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

pub const PATCH_W: usize = 0;
pub const PATCH_B: usize = 1;
pub const CLS: usize = 2;
pub const POS: usize = 3;

pub fn layer_index(layer: usize) -> LayerIndex {
    let b = 4 + LAYER_PARAMS.len() * layer;
    LayerIndex {
        ln1_gain: b,
        ln1_bias: b + 1,
        wq: b + 2,
        bq: b + 3,
        wk: b + 4,
        bk: b + 5,
        wv: b + 6,
        bv: b + 7,
        wo: b + 8,
        bo: b + 9,
        ln2_gain: b + 10,
        ln2_bias: b + 11,
        w1: b + 12,
        b1: b + 13,
        w2: b + 14,
        b2: b + 15,
    }
}

/// (final_ln_gain, final_ln_bias, head_w, head_b)
pub fn tail_index(config: &ModelConfig) -> [usize; 4] {
    let b = 4 + LAYER_PARAMS.len() * config.layers;
    [b, b + 1, b + 2, b + 3]
}

pub fn layout(config: &ModelConfig) -> Vec<ParamSpec> {
    let d = config.embed_dim;
    let h = config.mlp_dim();
    let spec = |name: String, rows, cols, init, backbone| ParamSpec {
        name,
        rows,
        cols,
        init,
        backbone,
    };
    let mut out = vec![
        spec("patch.w".into(), config.patch_area(), d, Init::TruncNormal, true),
        spec("patch.b".into(), 1, d, Init::Zeros, true),
        spec("cls".into(), 1, d, Init::TruncNormal, true),
        spec("pos".into(), config.num_patches() + 1, d, Init::TruncNormal, true),
    ];
    for l in 0..config.layers {
        for name in LAYER_PARAMS {
            let (rows, cols, init) = match name {
                "ln1.gain" | "ln2.gain" => (1, d, Init::Ones),
                "ln1.bias" | "ln2.bias" => (1, d, Init::Zeros),
                "attn.wq" | "attn.wk" | "attn.wv" | "attn.wo" => (d, d, Init::TruncNormal),
                "mlp.w1" => (d, h, Init::TruncNormal),
                "mlp.b1" => (1, h, Init::Zeros),
                "mlp.w2" => (h, d, Init::TruncNormal),
                _ => (1, d, Init::Zeros),
            };
            out.push(spec(format!("layer{l}.{name}"), rows, cols, init, true));
        }
    }
    out.push(spec("final_ln.gain".into(), 1, d, Init::Ones, true));
    out.push(spec("final_ln.bias".into(), 1, d, Init::Zeros, true));
    out.push(spec("head.w".into(), d, config.num_classes, Init::Zeros, false));
    out.push(spec("head.b".into(), 1, config.num_classes, Init::Zeros, false));
    out
}

/// Closed-form scalar parameter count.
pub fn param_count(config: &ModelConfig) -> usize {
    let d = config.embed_dim;
    let c = config.num_classes;
    let embed = config.patch_area() * d + d + d + (config.num_patches() + 1) * d;
    // two layernorms, four projections with bias, 4x MLP
    let per_layer = 12 * d * d + 13 * d;
    embed + config.layers * per_layer + 2 * d + d * c + c
}

/// All model tensors in declaration order. Values are kept exactly
/// representable in `f32` so checkpoints are lossless.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub tensors: Vec<Tensor>,
}

impl Parameters {
    pub fn zeros(config: &ModelConfig) -> Self {
        Self {
            tensors: layout(config).iter().map(|s| Tensor::zeros(s.rows, s.cols)).collect(),
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Rounds every value to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v = f64::from(*v as f32);
            }
        }
    }

    pub(crate) fn check_shapes(&self, config: &ModelConfig) -> Result<(), ModelError> {
        let specs = layout(config);
        if specs.len() != self.tensors.len() {
            return Err(ModelError::Shape(format!(
                "expected {} parameter tensors, got {}",
                specs.len(),
                self.tensors.len()
            )));
        }
        for (s, t) in specs.iter().zip(&self.tensors) {
            if t.shape() != [s.rows, s.cols] {
                return Err(ModelError::Shape(format!(
                    "{} has shape {:?}, expected {:?}",
                    s.name,
                    t.shape(),
                    [s.rows, s.cols]
                )));
            }
        }
        Ok(())
    }
}

fn trunc_normal(rng: &mut impl Rng, normal: &Normal<f64>) -> f64 {
    loop {
        let v = normal.sample(rng);
        if v.abs() <= 2.0 * INIT_STD {
            return v;
        }
    }
}

pub fn init_params(config: &ModelConfig, seed: u64) -> Parameters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("positive std");
    let tensors = layout(config)
        .iter()
        .map(|s| {
            let mut t = Tensor::zeros(s.rows, s.cols);
            match s.init {
                Init::Zeros => {}
                Init::Ones => t.data_mut().fill(1.0),
                Init::TruncNormal => {
                    for v in t.data_mut() {
                        *v = f64::from(trunc_normal(&mut rng, &normal) as f32);
                    }
                }
            }
            t
        })
        .collect();
    Parameters { tensors }
}

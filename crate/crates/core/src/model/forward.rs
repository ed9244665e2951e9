use super::params::{layer_index, tail_index, CLS, PATCH_B, PATCH_W, POS};
use super::{patchify, ModelConfig, ModelError, Parameters, Patches};
use crate::dsp::Spectrogram;
use crate::grad::{Axis, Tape, Tensor, Var};

/// One forward pass recorded on its own tape.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub tape: Tape,
    /// Parameter leaves in declaration order.
    pub params: Vec<Var>,
    pub tokens: Var,
    /// `1 × embed_dim`, final-layernormed CLS output.
    pub cls: Var,
    /// `1 × num_classes`
    pub logits: Var,
    /// `[layer][head]` attention probability nodes.
    pub attention: Vec<Vec<Var>>,
    pub grid: (usize, usize),
    pub padded_frames: usize,
}

impl ForwardTrace {
    pub fn logits(&self) -> &[f64] {
        self.tape.value(self.logits).data()
    }

    pub fn cls_representation(&self) -> &[f64] {
        self.tape.value(self.cls).data()
    }

    pub fn attention_matrix(&self, layer: usize, head: usize) -> &Tensor {
        self.tape.value(self.attention[layer][head])
    }

    /// Argmax of the logits; the first maximum wins ties.
    pub fn predicted_class(&self) -> usize {
        argmax(self.logits())
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn embed_on_tape(tape: &mut Tape, patches: Var, p: &[Var]) -> Result<Var, ModelError> {
    let n = tape.value(patches).rows();
    let capacity = tape.value(p[POS]).rows();
    if n + 1 > capacity {
        return Err(ModelError::Shape(format!(
            "{n} patches exceed positional capacity {}",
            capacity - 1
        )));
    }
    let d = tape.value(p[POS]).cols();
    let proj = tape.matmul(patches, p[PATCH_W])?;
    let proj = tape.add_row(proj, p[PATCH_B])?;
    let seq = tape.concat(&[p[CLS], proj], Axis::Rows)?;
    let pos = tape.slice(p[POS], 0, 0, n + 1, d)?;
    Ok(tape.add(seq, pos)?)
}

fn affine_norm(tape: &mut Tape, x: Var, gain: Var, bias: Var) -> Result<Var, ModelError> {
    let y = tape.layernorm(x)?;
    let y = tape.mul_row(y, gain)?;
    Ok(tape.add_row(y, bias)?)
}

fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var, ModelError> {
    let y = tape.matmul(x, w)?;
    Ok(tape.add_row(y, b)?)
}

/// Nodes of interest from [`forward_on_tape`].
#[derive(Debug, Clone)]
pub struct Recorded {
    pub tokens: Var,
    pub cls: Var,
    pub logits: Var,
    pub attention: Vec<Vec<Var>>,
}

/// Records the full model on `tape` given leaves for the flattened patches
/// and every parameter.
pub fn forward_on_tape(tape: &mut Tape, patches: Var, p: &[Var], config: &ModelConfig) -> Result<Recorded, ModelError> {
    let tokens = embed_on_tape(tape, patches, p)?;
    let mut x = tokens;
    let t = tape.value(x).rows();
    let dh = config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut attention = Vec::with_capacity(config.layers);
    for l in 0..config.layers {
        let ix = layer_index(l);
        let h = affine_norm(tape, x, p[ix.ln1_gain], p[ix.ln1_bias])?;
        let q = linear(tape, h, p[ix.wq], p[ix.bq])?;
        let k = linear(tape, h, p[ix.wk], p[ix.bk])?;
        let v = linear(tape, h, p[ix.wv], p[ix.bv])?;
        let mut heads = Vec::with_capacity(config.heads);
        let mut outs = Vec::with_capacity(config.heads);
        for head in 0..config.heads {
            let qh = tape.slice(q, 0, head * dh, t, dh)?;
            let kh = tape.slice(k, 0, head * dh, t, dh)?;
            let vh = tape.slice(v, 0, head * dh, t, dh)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale)?;
            let a = tape.softmax_rows(scores)?;
            tape.mark_attention(a, l, head)?;
            heads.push(a);
            outs.push(tape.matmul(a, vh)?);
        }
        let merged = tape.concat(&outs, Axis::Cols)?;
        let o = linear(tape, merged, p[ix.wo], p[ix.bo])?;
        x = tape.add(x, o)?;

        let h = affine_norm(tape, x, p[ix.ln2_gain], p[ix.ln2_bias])?;
        let h = linear(tape, h, p[ix.w1], p[ix.b1])?;
        let h = tape.gelu(h)?;
        let h = linear(tape, h, p[ix.w2], p[ix.b2])?;
        x = tape.add(x, h)?;
        attention.push(heads);
    }
    let [ln_g, ln_b, head_w, head_b] = tail_index(config);
    let d = config.embed_dim;
    let cls = tape.slice(x, 0, 0, 1, d)?;
    let cls = affine_norm(tape, cls, p[ln_g], p[ln_b])?;
    let logits = linear(tape, cls, p[head_w], p[head_b])?;
    Ok(Recorded {
        tokens,
        cls,
        logits,
        attention,
    })
}

pub fn forward_patches(patches: &Patches, params: &Parameters, config: &ModelConfig) -> Result<ForwardTrace, ModelError> {
    config.validate()?;
    params.check_shapes(config)?;
    if patches.data.cols() != config.patch_area() {
        return Err(ModelError::Shape(format!(
            "patch width {} does not match patch area {}",
            patches.data.cols(),
            config.patch_area()
        )));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
    let input = tape.leaf(patches.data.clone());
    let rec = forward_on_tape(&mut tape, input, &vars, config)?;
    Ok(ForwardTrace {
        tape,
        params: vars,
        tokens: rec.tokens,
        cls: rec.cls,
        logits: rec.logits,
        attention: rec.attention,
        grid: (patches.rows, patches.cols),
        padded_frames: patches.padded_frames,
    })
}

/// Patchifies with fill 0 (the normalized training mean) and runs the model.
pub fn forward(spec: &Spectrogram, params: &Parameters, config: &ModelConfig) -> Result<ForwardTrace, ModelError> {
    forward_patches(&patchify(spec, config, 0.0)?, params, config)
}

/// CLS representation only.
pub fn encode(spec: &Spectrogram, params: &Parameters, config: &ModelConfig) -> Result<Vec<f64>, ModelError> {
    Ok(forward(spec, params, config)?.cls_representation().to_vec())
}

/// `[CLS; projected patches] + positions`, `(N+1) × embed_dim`.
pub fn embed(patches: &Patches, params: &Parameters, config: &ModelConfig) -> Result<Tensor, ModelError> {
    params.check_shapes(config)?;
    let mut tape = Tape::new();
    let vars: Vec<Var> = [PATCH_W, PATCH_B, CLS, POS]
        .iter()
        .map(|&i| tape.leaf(params.tensors[i].clone()))
        .collect();
    let input = tape.leaf(patches.data.clone());
    let out = embed_on_tape(&mut tape, input, &vars)?;
    Ok(tape.value(out).clone())
}

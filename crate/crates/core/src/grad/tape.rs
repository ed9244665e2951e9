use super::tensor::{gemm, Tensor};
use super::GradError;

const LAYERNORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    SoftmaxRows(Var),
    LayerNorm { input: Var, inv_std: Vec<f64> },
    Gelu(Var),
    Mean(Var),
    Sum(Var),
    Slice { input: Var, row: usize, col: usize },
    Concat { inputs: Vec<Var>, axis: Axis },
    Transpose(Var),
    CrossEntropy { logits: Var, target: usize, probs: Vec<f64> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::Scale(..) => "scale",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::LayerNorm { .. } => "layernorm",
            Op::Gelu(..) => "gelu",
            Op::Mean(..) => "mean",
            Op::Sum(..) => "sum",
            Op::Slice { .. } => "slice",
            Op::Concat { .. } => "concat",
            Op::Transpose(..) => "transpose",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// A softmax output flagged as an attention probability matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionMark {
    pub var: Var,
    pub layer: usize,
    pub head: usize,
}

/// Append-only record of an eagerly evaluated computation.
///
/// Nodes are stored in creation order, which is also a topological order,
/// so the backward sweep is a single reverse pass over the node list.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    marks: Vec<AttentionMark>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn attention_marks(&self) -> &[AttentionMark] {
        &self.marks
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<&Tensor, GradError> {
        self.nodes
            .get(v.0)
            .map(|n| &n.value)
            .ok_or(GradError::UnknownVar(v.0))
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (va, vb) = (self.check(a)?, self.check(b)?);
        let out = va.matmul(vb).ok_or_else(|| shape_err("matmul", va, vb))?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (va, vb) = (self.check(a)?, self.check(b)?);
        if va.shape() != vb.shape() {
            return Err(shape_err("add", va, vb));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        Ok(self.push(Op::Add(a, b), out))
    }

    /// Adds a `1×cols` row to every row of `m`.
    pub fn add_row(&mut self, m: Var, row: Var) -> Result<Var, GradError> {
        let (vm, vr) = (self.check(m)?, self.check(row)?);
        if vr.rows() != 1 || vr.cols() != vm.cols() {
            return Err(shape_err("add_row", vm, vr));
        }
        let mut out = vm.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(vr.data()) {
                *o += b;
            }
        }
        Ok(self.push(Op::AddRow(m, row), out))
    }

    /// Multiplies every row of `m` elementwise by a `1×cols` row.
    pub fn mul_row(&mut self, m: Var, row: Var) -> Result<Var, GradError> {
        let (vm, vr) = (self.check(m)?, self.check(row)?);
        if vr.rows() != 1 || vr.cols() != vm.cols() {
            return Err(shape_err("mul_row", vm, vr));
        }
        let mut out = vm.clone();
        for r in 0..out.rows() {
            for (o, g) in out.row_mut(r).iter_mut().zip(vr.data()) {
                *o *= g;
            }
        }
        Ok(self.push(Op::MulRow(m, row), out))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, GradError> {
        let out = self.check(a)?.map(|v| v * factor);
        Ok(self.push(Op::Scale(a, factor), out))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, GradError> {
        let va = self.check(a)?;
        if va.cols() == 0 {
            return Err(GradError::Shape {
                op: "softmax_rows",
                lhs: va.shape(),
                rhs: None,
            });
        }
        let mut out = va.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        Ok(self.push(Op::SoftmaxRows(a), out))
    }

    /// Row-wise standardization without affine terms.
    pub fn layernorm(&mut self, a: Var) -> Result<Var, GradError> {
        let va = self.check(a)?;
        let n = va.cols() as f64;
        let mut out = va.clone();
        let mut inv_std = Vec::with_capacity(out.rows());
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + LAYERNORM_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
            inv_std.push(inv);
        }
        Ok(self.push(Op::LayerNorm { input: a, inv_std }, out))
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&mut self, a: Var) -> Result<Var, GradError> {
        let out = self.check(a)?.map(gelu);
        Ok(self.push(Op::Gelu(a), out))
    }

    /// Mean over all entries, as a `1×1` node.
    pub fn mean(&mut self, a: Var) -> Result<Var, GradError> {
        let va = self.check(a)?;
        let out = Tensor::scalar(va.sum() / va.len() as f64);
        Ok(self.push(Op::Mean(a), out))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, GradError> {
        let out = Tensor::scalar(self.check(a)?.sum());
        Ok(self.push(Op::Sum(a), out))
    }

    /// Copies the `rows×cols` block starting at `(row, col)`.
    pub fn slice(
        &mut self,
        a: Var,
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    ) -> Result<Var, GradError> {
        let va = self.check(a)?;
        if row + rows > va.rows() || col + cols > va.cols() {
            return Err(GradError::Shape {
                op: "slice",
                lhs: va.shape(),
                rhs: Some([row + rows, col + cols]),
            });
        }
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            out.row_mut(r)
                .copy_from_slice(&va.row(row + r)[col..col + cols]);
        }
        Ok(self.push(Op::Slice { input: a, row, col }, out))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: Axis) -> Result<Var, GradError> {
        let first = self.check(*inputs.first().ok_or(GradError::EmptyConcat)?)?;
        let (mut rows, mut cols) = (first.rows(), first.cols());
        for &v in &inputs[1..] {
            let t = self.check(v)?;
            match axis {
                Axis::Rows if t.cols() == cols => rows += t.rows(),
                Axis::Cols if t.rows() == rows => cols += t.cols(),
                _ => return Err(shape_err("concat", first, t)),
            }
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &v in inputs {
            let t = &self.nodes[v.0].value;
            match axis {
                Axis::Rows => {
                    let start = offset * cols;
                    out.data_mut()[start..start + t.len()].copy_from_slice(t.data());
                    offset += t.rows();
                }
                Axis::Cols => {
                    for r in 0..rows {
                        out.row_mut(r)[offset..offset + t.cols()].copy_from_slice(t.row(r));
                    }
                    offset += t.cols();
                }
            }
        }
        Ok(self.push(
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            out,
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, GradError> {
        let out = self.check(a)?.transpose();
        Ok(self.push(Op::Transpose(a), out))
    }

    /// `-log softmax(logits)[target]` for a `1×C` logit row.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var, GradError> {
        let vl = self.check(logits)?;
        if vl.rows() != 1 {
            return Err(GradError::Shape {
                op: "cross_entropy",
                lhs: vl.shape(),
                rhs: None,
            });
        }
        if target >= vl.cols() {
            return Err(GradError::ClassOutOfRange {
                class: target,
                classes: vl.cols(),
            });
        }
        let probs = softmax(vl.data());
        let loss = -probs[target].max(f64::MIN_POSITIVE).ln();
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
            Tensor::scalar(loss),
        ))
    }

    /// Flags a softmax output as the attention matrix of `(layer, head)`.
    pub fn mark_attention(&mut self, v: Var, layer: usize, head: usize) -> Result<(), GradError> {
        match self.nodes.get(v.0) {
            Some(Node {
                op: Op::SoftmaxRows(_),
                ..
            }) => {
                self.marks.push(AttentionMark { var: v, layer, head });
                Ok(())
            }
            Some(node) => Err(GradError::NotSoftmax(node.op.name())),
            None => Err(GradError::UnknownVar(v.0)),
        }
    }

    /// Reverse sweep from a `1×1` output.
    pub fn backward(&self, output: Var) -> Result<Gradients, GradError> {
        let v = self.check(output)?;
        if v.shape() != [1, 1] {
            return Err(GradError::NotScalar(v.shape()));
        }
        self.backward_seeded(output, Tensor::scalar(1.0))
    }

    /// Reverse sweep seeded with an explicit upstream gradient for `output`.
    pub fn backward_seeded(&self, output: Var, seed: Tensor) -> Result<Gradients, GradError> {
        let v = self.check(output)?;
        if v.shape() != seed.shape() {
            return Err(shape_err("backward_seeded", v, &seed));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let mut ga = Tensor::zeros(va.rows(), va.cols());
                gemm(false, g, true, vb, &mut ga, 0.0);
                accumulate(grads, *a, ga);
                let mut gb = Tensor::zeros(vb.rows(), vb.cols());
                gemm(true, va, false, g, &mut gb, 0.0);
                accumulate(grads, *b, gb);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::AddRow(m, row) => {
                accumulate(grads, *m, g.clone());
                let mut gr = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (s, v) in gr.data_mut().iter_mut().zip(g.row(r)) {
                        *s += v;
                    }
                }
                accumulate(grads, *row, gr);
            }
            Op::MulRow(m, row) => {
                let (vm, vr) = (val(*m), val(*row));
                let mut gm = g.clone();
                let mut gr = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    let grow = g.row(r);
                    let mrow = vm.row(r);
                    for c in 0..g.cols() {
                        gr.data_mut()[c] += grow[c] * mrow[c];
                    }
                    for (x, w) in gm.row_mut(r).iter_mut().zip(vr.data()) {
                        *x *= w;
                    }
                }
                accumulate(grads, *m, gm);
                accumulate(grads, *row, gr);
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.map(|v| v * s)),
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut gx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (c, out) in gx.row_mut(r).iter_mut().enumerate() {
                        *out = yr[c] * (gr[c] - dot);
                    }
                }
                accumulate(grads, *a, gx);
            }
            Op::LayerNorm { input, inv_std } => {
                let y = &node.value;
                let n = y.cols() as f64;
                let mut gx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let mean_g = gr.iter().sum::<f64>() / n;
                    let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                    for (c, out) in gx.row_mut(r).iter_mut().enumerate() {
                        *out = inv_std[r] * (gr[c] - mean_g - yr[c] * mean_gy);
                    }
                }
                accumulate(grads, *input, gx);
            }
            Op::Gelu(a) => {
                let x = val(*a);
                let mut gx = g.clone();
                for (o, &xv) in gx.data_mut().iter_mut().zip(x.data()) {
                    *o *= gelu_derivative(xv);
                }
                accumulate(grads, *a, gx);
            }
            Op::Mean(a) => {
                let x = val(*a);
                let s = g.data()[0] / x.len() as f64;
                accumulate(grads, *a, Tensor::filled(x.rows(), x.cols(), s));
            }
            Op::Sum(a) => {
                let x = val(*a);
                accumulate(grads, *a, Tensor::filled(x.rows(), x.cols(), g.data()[0]));
            }
            Op::Slice { input, row, col } => {
                let x = val(*input);
                let mut gx = Tensor::zeros(x.rows(), x.cols());
                for r in 0..g.rows() {
                    gx.row_mut(row + r)[*col..col + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(grads, *input, gx);
            }
            Op::Concat { inputs, axis } => {
                let mut offset = 0;
                for &v in inputs {
                    let x = val(v);
                    let mut gx = Tensor::zeros(x.rows(), x.cols());
                    match axis {
                        Axis::Rows => {
                            for r in 0..x.rows() {
                                gx.row_mut(r).copy_from_slice(g.row(offset + r));
                            }
                            offset += x.rows();
                        }
                        Axis::Cols => {
                            for r in 0..x.rows() {
                                gx.row_mut(r)
                                    .copy_from_slice(&g.row(r)[offset..offset + x.cols()]);
                            }
                            offset += x.cols();
                        }
                    }
                    accumulate(grads, v, gx);
                }
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
            Op::CrossEntropy {
                logits,
                target,
                probs,
            } => {
                let upstream = g.data()[0];
                let data = probs
                    .iter()
                    .enumerate()
                    .map(|(c, p)| upstream * (p - if c == *target { 1.0 } else { 0.0 }))
                    .collect();
                accumulate(grads, *logits, Tensor::row_vector(data));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> GradError {
    GradError::Shape {
        op,
        lhs: a.shape(),
        rhs: Some(b.shape()),
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn gelu_derivative(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

/// Gradients produced by one backward sweep. Read-only once built.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if `v` is not an ancestor of the output.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, materializing zeros for non-ancestors.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| {
            let t = tape.value(v);
            Tensor::zeros(t.rows(), t.cols())
        })
    }
}

//! Reverse-mode differentiation over eagerly evaluated matrix computations.
//!
//! A [`Tape`] records each primitive as it is evaluated. A backward sweep in
//! reverse append order yields gradients for every ancestor of the output.
//! Softmax nodes may be flagged as attention matrices so that their values
//! and gradients (`∂y_t/∂A`) can be retrieved per layer and head after a
//! single sweep from one class logit.

mod check;
mod tape;
mod tensor;

pub use check::{finite_diff_check, finite_diff_check_at, FiniteDiffReport};
pub use tape::{gelu, gelu_derivative, AttentionMark, Axis, Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::softmax;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: [usize; 2],
        rhs: Option<[usize; 2]>,
    },
    #[error("tensor data length {actual} does not match shape ({expected} entries)")]
    DataLength { expected: usize, actual: usize },
    #[error("backward requires a 1x1 output, got {0:?}")]
    NotScalar([usize; 2]),
    #[error("class index {class} out of range for {classes} logits")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("only softmax outputs can be marked as attention, got {0}")]
    NotSoftmax(&'static str),
    #[error("unknown node {0}")]
    UnknownVar(usize),
    #[error("concat needs at least one input")]
    EmptyConcat,
}

/// Attention values and their gradients for one layer, one entry per head.
#[derive(Debug, Clone)]
pub struct LayerAttentionGrads {
    pub layer: usize,
    pub attention: Vec<Tensor>,
    pub gradient: Vec<Tensor>,
}

/// Backpropagates from `logits[class]` and collects `∂y_t/∂A` for every
/// marked attention matrix, grouped by layer in ascending order.
pub fn attention_grads(
    tape: &Tape,
    logits: Var,
    class: usize,
) -> Result<Vec<LayerAttentionGrads>, GradError> {
    let shape = tape.value(logits).shape();
    if shape[0] != 1 {
        return Err(GradError::Shape {
            op: "attention_grads",
            lhs: shape,
            rhs: None,
        });
    }
    if class >= shape[1] {
        return Err(GradError::ClassOutOfRange {
            class,
            classes: shape[1],
        });
    }
    let mut seed = Tensor::zeros(1, shape[1]);
    seed.set(0, class, 1.0);
    let grads = tape.backward_seeded(logits, seed)?;

    let mut marks = tape.attention_marks().to_vec();
    marks.sort_by_key(|m| (m.layer, m.head));
    let mut out: Vec<LayerAttentionGrads> = Vec::new();
    for mark in marks {
        if out.last().map(|l| l.layer) != Some(mark.layer) {
            out.push(LayerAttentionGrads {
                layer: mark.layer,
                attention: Vec::new(),
                gradient: Vec::new(),
            });
        }
        let layer = out.last_mut().expect("pushed above");
        layer.attention.push(tape.value(mark.var).clone());
        layer.gradient.push(grads.get_or_zeros(tape, mark.var));
    }
    Ok(out)
}

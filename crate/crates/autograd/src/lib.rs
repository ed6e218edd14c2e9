//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Only the operations the detector needs are provided; each one carries a
//! hand-written vector-Jacobian product. [`gradcheck`] compares those against
//! central finite differences.

pub mod gradcheck;
mod ops;
pub mod optim;
mod tape;
mod tensor;

pub use ops::attention::{cross_attention_weights, pixel_attention_scores, pixel_attention_weights};
pub use ops::conv::Conv2dSpec;
pub use ops::elementwise::sigmoid;
pub use ops::shape::{avg_pool2d, avg_pool_last, frame_diff, pad_sum, repeat_last};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("invalid permutation {axes:?} for a {ndim}-d tensor")]
    BadPermutation { axes: Vec<usize>, ndim: usize },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("backward root must hold one value, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> TensorError {
    TensorError::Invalid {
        op,
        msg: msg.into(),
    }
}

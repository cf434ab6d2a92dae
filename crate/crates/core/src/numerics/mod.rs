//! Dense double-precision tensors with reverse-mode differentiation.

mod functions;
mod tape;
mod tensor;

pub use functions::{cosine_similarity, lstm_step, softmax, LstmVars};
pub use tape::{Gradients, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    ShapeMismatch { op: &'static str, expected: Vec<usize>, got: Vec<usize> },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },
    #[error("zero-norm vector in cosine similarity")]
    ZeroNorm,
    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
    #[error("loss must be scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("tape node {node} depends on a later node")]
    Cycle { node: usize },
}

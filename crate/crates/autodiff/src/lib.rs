//! Reverse-mode automatic differentiation over dense 2-D `f64` matrices.
//!
//! A [`Tape`] records every operation as it is evaluated. Calling
//! [`Tape::backward`] on a scalar (1×1) node walks the records in reverse
//! and accumulates gradients into every node that was created with
//! `requires_grad`. Scalars are 1×1 matrices and column/row vectors are
//! n×1 / 1×n matrices; there is no implicit broadcasting beyond the explicit
//! `*_row` / `*_col` helpers.

mod gradcheck;
mod ops;
mod tape;

pub use gradcheck::{gradcheck, relative_error};
pub use tape::{Gradients, Segments, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward requires a 1x1 loss, got {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("backward was already run on this tape; call reset() first")]
    BackwardTwice,
    #[error("invalid segment layout: {0}")]
    Segments(String),
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
}

pub type Result<T> = std::result::Result<T, AdError>;

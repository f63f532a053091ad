//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! Only scalar-with-tensor broadcasting is supported; every other binary
//! operation requires identical shapes. Callers insert explicit
//! [`Var::tile_rows`] or [`Var::reshape`] nodes instead.

mod check;
mod kernels;
mod tape;
mod tensor;

pub use check::finite_diff_check;
pub use tape::{Gradients, NodeId, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: value {value} outside the domain")]
    Domain { op: &'static str, value: f64 },
    #[error("backward root must be a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("invalid tensor shape {shape:?}")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    Axis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("slice {start}..{end} out of range on axis {axis} of shape {shape:?}")]
    SliceRange {
        start: usize,
        end: usize,
        shape: Vec<usize>,
        axis: usize,
    },
    #[error("{op}: no inputs")]
    EmptyInput { op: &'static str },
}

#[cfg(test)]
mod tests;

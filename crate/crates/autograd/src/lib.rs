//! Small reverse-mode autodiff engine for convolutional networks.
//!
//! A [`Graph`] is a tape: every operation evaluates eagerly and records how to
//! pull a gradient back through itself. Tensors are dense and row-major; image
//! tensors are NCHW. Matrix products go through `matrixmultiply`.

mod conv;
pub mod gradcheck;
mod graph;
mod scalar;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use scalar::{gemm, MatLayout, Scalar};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    ShapeMismatch { op: &'static str, expected: Vec<usize>, got: Vec<usize> },
    #[error("{op}: expected rank {expected}, got shape {got:?}")]
    Rank { op: &'static str, expected: usize, got: Vec<usize> },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = GraphError> = std::result::Result<T, E>;

/// Logistic function, stable for large |v|.
pub fn sigmoid<T: Scalar>(v: T) -> T {
    graph::sigmoid(v)
}

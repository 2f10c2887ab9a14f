//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! Computations are recorded on a [`Graph`]; [`Graph::grad`] can either
//! return plain gradients or record the backward sweep as more graph nodes,
//! which is what differentiating through an inner gradient step needs.

mod graph;
mod tensor;

pub use graph::{sigmoid, softmax_rows, GradMode, Graph, Mode, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("dropout probability {0} outside [0, 1)")]
    InvalidProbability(f64),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

//! Define-by-run reverse-mode automatic differentiation over dense `f64`
//! arrays, and the Adam optimizer.

mod adam;
mod graph;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use graph::{Graph, Var, LEAKY_SLOPE};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} needs {} elements, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("log of non-positive value {0}")]
    NonPositiveLog(f64),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("backward already ran on this graph; rebuild it with a fresh forward pass")]
    BackwardTwice,
    #[error("gradients requested before backward")]
    NoGradients,
    #[error("variable belongs to a different graph")]
    ForeignVar,
    #[error("non-finite gradient at element {index} of parameter {param}")]
    NonFiniteGradient { param: usize, index: usize },
    #[error("adam state does not match parameter {param}: {detail}")]
    AdamMismatch { param: usize, detail: String },
}

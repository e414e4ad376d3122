//! Dense tensors, a reverse-mode differentiation tape, parameter storage,
//! the Adam optimizer and the checkpoint container.

mod adam;
mod checkpoint;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use params::{Bound, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("non-finite value in {phase} pass of {op} (node {node})")]
    NonFinite { op: &'static str, node: usize, phase: &'static str },
    #[error("backward needs a 1-element output, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("shape {shape:?} does not hold {len} values")]
    BadShape { shape: Vec<usize>, len: usize },
    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
}

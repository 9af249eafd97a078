//! Small dense-matrix kernel: tensors, a reverse-mode tape over the
//! primitives the model needs, Glorot initialization and Adam.

mod optim;
mod tape;
mod tensor;

pub use optim::Adam;
pub use tape::{Grads, Index, Tape, Var};
pub use tensor::{glorot_bound, glorot_init, Tensor};

use thiserror::Error;

/// Negative slope of every LeakyReLU in the model.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("index {index} out of range in {op} (bound {bound})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
}

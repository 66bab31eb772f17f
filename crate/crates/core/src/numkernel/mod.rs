//! Dense 64-bit arithmetic with a reverse-mode tape.
//!
//! Everything numeric in the model goes through [`Graph`]: vectors are graph
//! nodes, matrices are parameters owned by a [`ParamStore`].

mod array;
mod graph;
mod params;
mod rng;
pub mod gradcheck;

pub use array::{axpy, dot, Array, DType};
pub use graph::{layer_norm, masked_softmax, Graph, Var};
pub use params::{Gradients, ParamId, ParamStore};
pub use rng::{masked_argmax, sample_categorical, RngStream, StreamKind};

/// Added to the variance inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, thiserror::Error)]
pub enum KernelError {
    #[error("empty mask: no admissible entry")]
    EmptyMask,
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
}

#[cfg(test)]
mod tests;

//! Dense tensors and define-by-run reverse-mode differentiation.

mod graph;
pub mod gradcheck;
mod tensor;

pub use graph::{Graph, Var};
pub use tensor::Tensor;

/// Default layernorm epsilon.
pub const LAYERNORM_EPS: f64 = 1e-5;

#[cfg(test)]
mod tests;

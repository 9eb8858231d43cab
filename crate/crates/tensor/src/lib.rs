//! Dense `f64` tensors with a tape-based reverse-mode autodiff.
//!
//! Tensors are immutable values; a [`Graph`] records operations on [`Var`]
//! handles and computes gradients of a scalar with [`Graph::backward`].

mod error;
mod graph;
mod kernels;
pub mod check;
pub mod special;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{rope_vector, Gradients, Graph, Var};
pub use tensor::Tensor;

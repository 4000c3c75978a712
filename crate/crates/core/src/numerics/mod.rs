//! Minimal dense tensors with tape-based reverse-mode differentiation.
//!
//! Tensors are row-major. Images inside the networks are laid out as
//! `C×H×W`, matrices as `rows×cols`. A [`Graph`] records the primitive
//! operations of one forward pass; [`Graph::backward`] replays it in reverse.

mod graph;
pub mod gradcheck;
pub(crate) mod kernels;
mod ops;
mod params;
mod scalar;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use ops::{conv2d, matmul, softmax_rows};
pub use params::ParamStore;
pub use scalar::Scalar;
pub use tensor::Tensor;

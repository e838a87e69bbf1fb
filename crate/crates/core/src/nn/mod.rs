//! Minimal CPU tensor engine: dense tensors, reverse-mode autograd and Adam.

pub mod autograd;
pub mod gradcheck;
pub mod kernels;
pub mod optim;
pub mod tensor;

pub use autograd::{weighted_sum, Var};
pub use optim::Adam;
pub use tensor::{Real, Tensor};

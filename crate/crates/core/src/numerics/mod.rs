//! Dense `f64` tensors with taped reverse-mode differentiation.

pub mod checkpoint;
pub mod gradcheck;
mod graph;
pub mod optim;
mod params;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Graph, Var};
pub use optim::Adam;
pub use params::{Gradients, ParamStore, Parameter};
pub use tensor::Tensor;

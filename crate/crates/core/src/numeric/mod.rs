//! Dense `f64` tensors, a reverse-mode tape, and the layers built on it.

mod gradcheck;
pub mod nn;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_report, GradCheckReport};
pub use optim::{Adam, AdamConfig};
pub use params::{Group, ParamEntry, ParamGrads, ParamId, ParamStore};
pub use tape::{sigmoid, softplus, Gradients, Tape, Var};
pub use tensor::Tensor;

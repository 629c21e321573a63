//! Dense matrices, a reverse-mode autodiff tape and the Adam optimizer.
//!
//! Everything is row-major `f64`. The tape records each primitive together
//! with a closure computing the vector-Jacobian product for its inputs;
//! [`Tape::backward`] replays them in reverse order exactly once.

mod adam;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig, StepOutcome};
pub use gradcheck::{grad_check, GradCheckReport};
pub use params::{init_uniform, ParamId, ParamStore};
pub use tape::{bce, sigmoid, softmax_in_place, Gradients, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;

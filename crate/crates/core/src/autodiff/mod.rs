//! A small reverse-mode automatic differentiation engine.
//!
//! Values are dense row-major matrices of `f64`. A [`Tape`] records every
//! operation applied to its [`Var`]s; [`Tape::backward`] then walks the
//! records in reverse and accumulates gradients into the parameters of the
//! [`ParamStore`] the tape was built on.

mod checkpoint;
mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use optim::{clip_global_norm, Adam, StepReport};
pub use params::{Grads, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;

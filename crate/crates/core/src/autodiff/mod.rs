//! Reverse-mode automatic differentiation over dense multi-dimensional
//! arrays. Everything differentiable in the system — renderer, dynamics,
//! networks, losses — is expressed through this op catalog.

mod gradcheck;
pub mod ops;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{GradientMap, OpKind, Tape};
pub use tensor::{NodeId, Tensor};

#[cfg(test)]
mod tests;

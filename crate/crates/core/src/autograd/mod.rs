//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation; [`Tape::backward`] replays the record
//! in reverse to populate gradients. Tensors are identified by [`TensorId`]
//! handles into the tape. The scalar type is generic: tests and gradient
//! checks run at `f64`, training runs at `f32`.

mod gradcheck;
mod scalar;
mod tape;

pub use gradcheck::{grad_check, grad_check_sampled};
pub use scalar::Scalar;
pub use tape::{Tape, TensorId};

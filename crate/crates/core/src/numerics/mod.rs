//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! Values are `f64` throughout; the gradient checks in this crate rely on
//! that precision.

pub mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

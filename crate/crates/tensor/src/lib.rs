//! Dense N-D `f64` tensors and a tape-based reverse-mode autodiff engine.
//!
//! Values live in [`Tensor`] (row-major, contiguous). Differentiable
//! computation is recorded on a [`Tape`]: leaves are registered with
//! [`Tape::param`] or [`Tape::constant`], every op appends one node, and
//! [`Tape::backward`] replays the nodes in reverse recording order. A tape is
//! meant to be built fresh for every forward pass.

mod error;
pub mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use tape::{Tape, Var};
pub use tensor::{broadcast_shape, inverse_permutation, Tensor};

//! Minimal differentiable tensor substrate.
//!
//! Dense f32 arrays, a small set of forward kernels, reverse-mode gradients
//! through a Wengert tape, and the Adam update. Everything above this module
//! is expressed in these operations.
//!
//! Forward and backward passes are pure functions of their inputs; a
//! [`Tape`] or [`AdamState`] is a single-writer resource. Results are
//! bitwise reproducible for a fixed seed.

mod adam;
mod eager;
mod error;
pub mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod rng;
mod tape;
mod tensor;

pub use adam::{AdamParams, AdamState};
pub use eager::Eager;
pub use error::NumericsError;
pub use graph::{Graph, IndexMap, Padding};
pub use rng::Rng;
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;

pub type Result<T> = std::result::Result<T, NumericsError>;

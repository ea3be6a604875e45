//! Minimal numeric toolkit: tensors, a gradient tape, Adam, checkpoints and
//! a finite-difference gradient checker.

pub mod gradcheck;
pub mod store;
pub mod tape;
pub mod tensor;

pub use gradcheck::{check_gradients, GradReport};
pub use store::{AdamConfig, ParamStore};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;

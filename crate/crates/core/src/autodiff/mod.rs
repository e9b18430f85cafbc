//! Reverse-mode automatic differentiation over small dense `f64` tensors.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! sweeps it in reverse from a scalar root. Parameters live outside the tape
//! in a [`ParamSet`] and are bound as leaves for each pass.

mod checkpoint;
pub mod gradcheck;
mod mlp;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use mlp::Mlp;
pub use optim::{adam_step, AdamConfig, ParamSet, Parameter};
pub use tape::{quat_matrix, Gradients, Tape, Var};
pub use tensor::Tensor;

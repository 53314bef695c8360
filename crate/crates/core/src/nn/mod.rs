//! Minimal deterministic network engine.
//!
//! Parameters live in [`ParamBlock`]s that are frozen and unfrozen as units;
//! the classification head is always its own block. All arithmetic is `f64`
//! and every reduction has a fixed order, so identical inputs produce
//! bit-identical outputs.

pub mod checkpoint;
mod grads;
mod layers;
mod model;
mod optim;

pub use grads::Gradients;
pub use model::{block_id, softmax_rows, Activation, Arch, Model, ParamBlock, Scope, ScoreNorms, HEAD_ID};
pub use optim::{OptimizerKind, OptimizerState};

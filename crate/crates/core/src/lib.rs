//! Desk-scale laboratory for the early period of neural-network training.
//!
//! The crate is split along the lines of the experiment pipeline:
//!
//! - [`nn`]: a small deterministic network engine with block-partitioned
//!   parameters, explicit backprop, SGD-momentum / AdamW and a pre-head
//!   feature hook.
//! - [`data`]: IDX ingestion, synthetic tasks and a deterministic
//!   corruption bench used as the out-of-distribution suite.
//! - [`metrics`]: Fisher trace, average / worst-case sharpness, gradient
//!   similarity and feature rank.
//! - [`interventions`]: gradual unfreezing, step warm-up and the delayed
//!   Fisher penalty.
//! - [`detect`]: stabilization detection on metric traces and the derived
//!   unfreezing interval.

pub mod data;
pub mod detect;
pub mod error;
pub mod interventions;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::PrngStreams;
pub use tensor::Tensor;

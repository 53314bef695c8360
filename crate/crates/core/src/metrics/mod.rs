//! Learning-dynamics measurements on a fixed metric sample.
//!
//! Everything here reads the model without modifying it and measures with
//! respect to the currently trainable parameters unless a scope is passed.

mod fisher;
mod objective;
mod rank;
mod sharpness;
mod similarity;

use serde::{Deserialize, Serialize};

pub use fisher::{trace_fisher, FisherMode};
pub use objective::{DiagQuadratic, ModelObjective, Objective};
pub use rank::{feature_rank, matrix_rank, DEFAULT_RANK_TOL};
pub use sharpness::{
    avg_draw_deltas, c_vector, perturbed_increases, sharpness_avg, sharpness_worst, CMode, Norm, PgdConfig,
    SharpnessConfig, WorstCase,
};
pub use similarity::{grad_similarity, mean_cosine, GsRecord};

/// One row of a metric trace. Disabled metrics are `NaN`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub trf: f64,
    pub s_avg: f64,
    pub s_worst: f64,
    pub loss: f64,
    pub n_trainable: usize,
}

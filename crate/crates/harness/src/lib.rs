//! Experiment orchestration: configuration, training runs with metric
//! traces, ID / OOD evaluation, k-sweeps and the winning-rate protocol.

pub mod autorun;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod pool;
pub mod store;
pub mod sweep;
pub mod trace;
pub mod train;

pub use autorun::{autorun, random_ks, AutorunOutput, WinningRateReport};
pub use config::ExperimentConfig;
pub use data::Prepared;
pub use error::{HarnessError, Result};
pub use eval::{evaluate, EvalResult};
pub use sweep::{auto_k_set, parse_ks, sweep_k, SweepTable};
pub use trace::TraceFile;
pub use train::{run_head_only, run_training, RunOutput, RunReport, RunStatus};

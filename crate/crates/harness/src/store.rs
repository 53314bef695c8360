//! Run directories: `run_<confighash>_<seed>/` holding the trace, the
//! report and (for successful runs) a checkpoint.

use std::path::{Path, PathBuf};

use eseize_core::nn::checkpoint;
use serde::Serialize;

use crate::config::run_dir_name;
use crate::error::Result;
use crate::train::RunOutput;

pub const TRACE_FILE: &str = "trace.csv";
pub const REPORT_FILE: &str = "report.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CONFIG_FILE: &str = "config.json";

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

/// Writes the artifacts of one run under `out` and returns its directory.
pub fn write_run(out: &Path, run: &RunOutput, config_json: &str, save_checkpoint: bool) -> Result<PathBuf> {
    let dir = out.join(run_dir_name(&run.config_hash, run.seed));
    std::fs::create_dir_all(&dir)?;
    run.trace.save(&dir.join(TRACE_FILE))?;
    std::fs::write(dir.join(REPORT_FILE), to_json(&run.report()))?;
    std::fs::write(dir.join(CONFIG_FILE), config_json)?;
    if save_checkpoint && run.status.is_ok() {
        checkpoint::save(&run.model, &dir.join(CHECKPOINT_FILE))?;
    }
    Ok(dir)
}

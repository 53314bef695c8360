//! k-sweeps: every (k, seed) pair trained once, deltas taken against the
//! k = 0 run of the same seed.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::Prepared;
use crate::error::{HarnessError, Result};
use crate::pool::map_parallel;
use crate::store::write_run;
use crate::train::{run_training, RunReport};

/// `{0, 1}` plus 8 log-spaced values up to `k_max` (rounded, deduplicated,
/// always ending at `k_max`).
pub fn auto_k_set(k_max: u64) -> Vec<u64> {
    let mut ks = BTreeSet::from([0u64]);
    if k_max >= 1 {
        ks.insert(1);
        let lk = (k_max as f64).ln();
        for i in 1..=8 {
            let k = (lk * i as f64 / 8.0).exp().round() as u64;
            ks.insert(k.clamp(1, k_max));
        }
        ks.insert(k_max);
    }
    ks.into_iter().collect()
}

/// `"auto"` or a comma-separated list. Duplicates, values above `k_max` and
/// lists without the k = 0 baseline are rejected.
pub fn parse_ks(spec: &str, k_max: u64) -> Result<Vec<u64>> {
    if spec.trim() == "auto" {
        return Ok(auto_k_set(k_max));
    }
    let mut ks = Vec::new();
    for part in spec.split(',') {
        let k: u64 = part
            .trim()
            .parse()
            .map_err(|_| HarnessError::Config(format!("bad k value {part:?}")))?;
        if ks.contains(&k) {
            return Err(HarnessError::Config(format!("duplicate k value {k}")));
        }
        if k > k_max {
            return Err(HarnessError::Config(format!("k = {k} exceeds k_max = {k_max}")));
        }
        ks.push(k);
    }
    if !ks.contains(&0) {
        return Err(HarnessError::Config("the k list must include the k = 0 baseline".into()));
    }
    ks.sort_unstable();
    Ok(ks)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    /// Mean and sample standard deviation (0 for fewer than two values).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, std, n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: u64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub id: Stat,
    pub ood: Stat,
    pub delta_id: Stat,
    pub delta_ood: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub config_hash: String,
    pub k_max: u64,
    pub seeds: Vec<u64>,
    pub rows: Vec<SweepRow>,
    pub runs: Vec<RunReport>,
}

impl SweepTable {
    pub fn row(&self, k: u64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.k == k)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let err = |e: csv::Error| HarnessError::Format(e.to_string());
        w.write_record([
            "k",
            "n_ok",
            "n_failed",
            "mean_id",
            "std_id",
            "mean_ood",
            "std_ood",
            "mean_delta_id",
            "std_delta_id",
            "mean_delta_ood",
            "std_delta_ood",
        ])
        .map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.k.to_string(),
                r.n_ok.to_string(),
                r.n_failed.to_string(),
                r.id.mean.to_string(),
                r.id.std.to_string(),
                r.ood.mean.to_string(),
                r.ood.std.to_string(),
                r.delta_id.mean.to_string(),
                r.delta_id.std.to_string(),
                r.delta_ood.mean.to_string(),
                r.delta_ood.std.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Trains each configuration for each seed (in parallel) and writes the run
/// directories under `out` when given. Reports come back in input order.
pub fn run_grid(cfgs: &[ExperimentConfig], seeds: &[u64], data: &Prepared, out: Option<&Path>) -> Result<Vec<RunReport>> {
    let jobs: Vec<(usize, u64)> = (0..cfgs.len()).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect();
    let results = map_parallel(jobs, |(i, seed)| -> Result<RunReport> {
        let run = run_training(&cfgs[i], seed, data)?;
        if let Some(dir) = out {
            write_run(dir, &run, &cfgs[i].to_json_pretty(), cfgs[i].save_checkpoint)?;
        }
        Ok(run.report())
    });
    results.into_iter().collect()
}

/// Aggregates per-run reports into one row per k; failed runs are counted
/// and excluded from every mean.
pub fn aggregate(cfg: &ExperimentConfig, ks: &[u64], seeds: &[u64], runs: Vec<RunReport>) -> SweepTable {
    let find = |k: u64, seed: u64| {
        runs.iter()
            .find(|r| r.k == k && r.seed == seed)
            .and_then(|r| r.eval.as_ref())
    };
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let (mut id, mut ood, mut did, mut dood) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut n_failed = 0;
        for &seed in seeds {
            match find(k, seed) {
                Some(e) => {
                    id.push(e.id_acc);
                    ood.push(e.ood_mean);
                    if let Some(b) = find(0, seed) {
                        did.push(e.id_acc - b.id_acc);
                        dood.push(e.ood_mean - b.ood_mean);
                    }
                }
                None => n_failed += 1,
            }
        }
        rows.push(SweepRow {
            k,
            n_ok: id.len(),
            n_failed,
            id: Stat::of(&id),
            ood: Stat::of(&ood),
            delta_id: Stat::of(&did),
            delta_ood: Stat::of(&dood),
        });
    }
    SweepTable {
        config_hash: cfg.hash(),
        k_max: cfg.k_max(),
        seeds: seeds.to_vec(),
        rows,
        runs,
    }
}

pub fn sweep_k(cfg: &ExperimentConfig, ks: &[u64], seeds: &[u64], data: &Prepared, out: Option<&Path>) -> Result<SweepTable> {
    if !ks.contains(&0) {
        return Err(HarnessError::Config("the k list must include the k = 0 baseline".into()));
    }
    let mut sorted = ks.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let cfgs: Vec<ExperimentConfig> = sorted.iter().map(|&k| cfg.with_k(k)).collect();
    for c in &cfgs {
        c.validate()?;
    }
    let runs = run_grid(&cfgs, seeds, data, out)?;
    Ok(aggregate(cfg, &sorted, seeds, runs))
}

//! Two-phase protocol: a head-only run yields metric traces and k-hat per
//! metric, then fresh runs at each k-hat are compared against runs at
//! log-uniform random k on mean OOD accuracy.

use std::collections::BTreeMap;
use std::path::Path;

use eseize_core::detect::{select_khat, DetectionResult};
use eseize_core::rng::{PrngStreams, Stream};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::Prepared;
use crate::error::Result;
use crate::store::write_run;
use crate::sweep::{run_grid, Stat};
use crate::train::{run_head_only, RunOutput};

/// `n` draws of `round(exp(u * ln k_max))`, `u ~ U[0, 1)`, clamped to
/// `[1, k_max]`, from the `random_k` stream of `seed`.
pub fn random_ks(seed: u64, k_max: u64, n: usize) -> Vec<u64> {
    let mut rng = PrngStreams::new(seed).stream(Stream::RandomK);
    let lk = (k_max.max(1) as f64).ln();
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            ((u * lk).exp().round() as u64).clamp(1, k_max.max(1))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KResult {
    pub k: u64,
    pub id_acc: Stat,
    pub ood_acc: Stat,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricOutcome {
    pub metric: String,
    pub detection: Option<DetectionResult>,
    pub error: Option<String>,
    pub k_hat: Option<u64>,
    pub id_acc: Option<f64>,
    pub ood_acc: Option<f64>,
    pub wins: Option<usize>,
    pub wr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinningRateReport {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub phase_a_seed: u64,
    pub k_max: u64,
    pub random_ks: Vec<u64>,
    /// Ties count as losses.
    pub strict_wins: bool,
    pub metrics: Vec<MetricOutcome>,
    /// Results per distinct k, each trained once over all seeds.
    pub results: Vec<KResult>,
}

impl WinningRateReport {
    pub fn metric(&self, name: &str) -> Option<&MetricOutcome> {
        self.metrics.iter().find(|m| m.metric == name)
    }
}

pub struct AutorunOutput {
    pub report: WinningRateReport,
    pub phase_a: RunOutput,
}

pub fn autorun(cfg: &ExperimentConfig, data: &Prepared, out: Option<&Path>) -> Result<AutorunOutput> {
    cfg.validate()?;
    let phase_a_seed = cfg.seeds[0];
    let phase_a = run_head_only(cfg, phase_a_seed, data, cfg.autorun.record)?;
    if let Some(dir) = out {
        write_run(&dir.join("phase_a"), &phase_a, &cfg.to_json_pretty(), false)?;
    }
    let traces = phase_a.trace.metric_traces()?;
    let wanted: BTreeMap<_, _> = traces
        .into_iter()
        .filter(|(name, _)| cfg.autorun.metrics.contains(name))
        .collect();
    let detections = select_khat(&wanted, &cfg.detector, cfg.stride);

    let k_max = cfg.k_max();
    let rks = random_ks(phase_a_seed, k_max, cfg.autorun.n_random);
    let mut ks: Vec<u64> = rks.clone();
    for r in detections.values().flatten() {
        if r.k_hat <= k_max {
            ks.push(r.k_hat);
        }
    }
    ks.sort_unstable();
    ks.dedup();
    let cfgs: Vec<ExperimentConfig> = ks.iter().map(|&k| cfg.with_k(k)).collect();
    let runs = run_grid(&cfgs, &cfg.seeds, data, out)?;
    let results: Vec<KResult> = ks
        .iter()
        .map(|&k| {
            let evals: Vec<_> = runs.iter().filter(|r| r.k == k).filter_map(|r| r.eval.as_ref()).collect();
            let total = runs.iter().filter(|r| r.k == k).count();
            KResult {
                k,
                id_acc: Stat::of(&evals.iter().map(|e| e.id_acc).collect::<Vec<_>>()),
                ood_acc: Stat::of(&evals.iter().map(|e| e.ood_mean).collect::<Vec<_>>()),
                n_failed: total - evals.len(),
            }
        })
        .collect();
    let by_k = |k: u64| results.iter().find(|r| r.k == k);

    let mut metrics = Vec::new();
    for name in &cfg.autorun.metrics {
        let mut m = MetricOutcome {
            metric: name.clone(),
            detection: None,
            error: None,
            k_hat: None,
            id_acc: None,
            ood_acc: None,
            wins: None,
            wr: None,
        };
        match detections.get(name) {
            None => m.error = Some("metric not recorded in the head-only run".into()),
            Some(Err(e)) => m.error = Some(e.to_string()),
            Some(Ok(d)) if d.k_hat > k_max => {
                m.detection = Some(d.clone());
                m.error = Some(format!("k_hat {} exceeds k_max {k_max}", d.k_hat));
            }
            Some(Ok(d)) => {
                m.detection = Some(d.clone());
                m.k_hat = Some(d.k_hat);
                let own = by_k(d.k_hat).expect("k_hat was trained");
                m.id_acc = Some(own.id_acc.mean);
                m.ood_acc = Some(own.ood_acc.mean);
                let wins = rks
                    .iter()
                    .filter(|&&k| {
                        let other = by_k(k).expect("random k was trained");
                        own.ood_acc.mean > other.ood_acc.mean
                    })
                    .count();
                m.wins = Some(wins);
                m.wr = Some(wins as f64 / rks.len() as f64);
            }
        }
        metrics.push(m);
    }
    Ok(AutorunOutput {
        report: WinningRateReport {
            config_hash: cfg.hash(),
            seeds: cfg.seeds.clone(),
            phase_a_seed,
            k_max,
            random_ks: rks,
            strict_wins: true,
            metrics,
            results,
        },
        phase_a,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_ks_are_reproducible_and_in_range() {
        let a = random_ks(3, 300, 10);
        assert_eq!(a, random_ks(3, 300, 10));
        assert_ne!(a, random_ks(4, 300, 10));
        assert!(a.iter().all(|&k| (1..=300).contains(&k)));
        assert_eq!(random_ks(1, 1, 5), vec![1; 5]);
    }

    #[test]
    fn random_ks_are_log_uniform() {
        let ks = random_ks(0, 10_000, 20_000);
        let below_100 = ks.iter().filter(|&&k| k < 100).count() as f64 / ks.len() as f64;
        assert!((below_100 - 0.5).abs() < 0.02, "{below_100}");
    }
}

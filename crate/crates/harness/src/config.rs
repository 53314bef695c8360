//! Experiment configuration: one JSON document, every field defaulted,
//! unknown keys rejected.

use std::path::{Path, PathBuf};

use eseize_core::data::SyntheticTask;
use eseize_core::detect::DetectorConfig;
use eseize_core::interventions::{FisherPenaltyConfig, UnfreezeOrder};
use eseize_core::metrics::{FisherMode, SharpnessConfig};
use eseize_core::nn::{Arch, OptimizerKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const MNIST_DIR_ENV: &str = "ESEIZE_MNIST_DIR";
pub const DEFAULT_MNIST_DIR: &str = "/root/data/mnist";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// MNIST-format IDX files. `dir` falls back to `$ESEIZE_MNIST_DIR`,
    /// then to the default location.
    Idx {
        #[serde(default)]
        dir: Option<PathBuf>,
        #[serde(default = "yes")]
        downsample_14: bool,
        #[serde(default)]
        train_n: Option<usize>,
        #[serde(default)]
        test_n: Option<usize>,
    },
    Synthetic {
        task: SyntheticTask,
        #[serde(default = "default_syn_train")]
        n_train: usize,
        #[serde(default = "default_syn_test")]
        n_test: usize,
        #[serde(default = "default_syn_noise")]
        noise_sd: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn yes() -> bool {
    true
}
fn default_syn_train() -> usize {
    2000
}
fn default_syn_test() -> usize {
    1000
}
fn default_syn_noise() -> f64 {
    0.05
}

impl DatasetConfig {
    pub fn idx_dir(dir: &Option<PathBuf>) -> PathBuf {
        dir.clone()
            .or_else(|| std::env::var_os(MNIST_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_MNIST_DIR))
    }
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic {
            task: SyntheticTask::GaussBlobs,
            n_train: default_syn_train(),
            n_test: default_syn_test(),
            noise_sd: default_syn_noise(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub kind: OptimizerKind,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            kind: OptimizerKind::adamw_default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnfreezeConfig {
    pub k: u64,
    pub order: UnfreezeOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarmupConfig {
    pub divisor: f64,
    pub switch_step: u64,
}

impl Default for WarmupConfig {
    fn default() -> Self {
        Self {
            divisor: 1.0,
            switch_step: 0,
        }
    }
}

/// Which trace columns are computed; disabled ones are written as NaN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricToggles {
    pub trf: bool,
    pub s_avg: bool,
    pub s_worst: bool,
}

impl Default for MetricToggles {
    fn default() -> Self {
        Self {
            trf: true,
            s_avg: true,
            s_worst: true,
        }
    }
}

impl MetricToggles {
    pub fn none() -> Self {
        Self {
            trf: false,
            s_avg: false,
            s_worst: false,
        }
    }

    pub fn any(&self) -> bool {
        self.trf || self.s_avg || self.s_worst
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KMaxRule {
    #[default]
    EqualDivision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutorunConfig {
    /// Trace columns used to pick k-hat.
    pub metrics: Vec<String>,
    pub n_random: usize,
    /// Metric columns recorded during the head-only phase.
    pub record: MetricToggles,
}

impl Default for AutorunConfig {
    fn default() -> Self {
        Self {
            metrics: vec!["trf".into(), "s_avg".into(), "s_worst".into()],
            n_random: 10,
            record: MetricToggles::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub arch: Arch,
    pub dataset: DatasetConfig,
    pub optimizer: OptimizerConfig,
    pub total_steps: u64,
    pub batch_size: usize,
    pub unfreeze: UnfreezeConfig,
    pub warmup: WarmupConfig,
    pub penalty: FisherPenaltyConfig,
    pub sharpness: SharpnessConfig,
    pub fisher_mode: FisherMode,
    pub detector: DetectorConfig,
    pub stride: u64,
    pub metrics: MetricToggles,
    pub metric_sample_size: usize,
    /// Seed for the corrupted evaluation suite, shared by every run.
    pub ood_seed: u64,
    pub seeds: Vec<u64>,
    pub k_max_rule: KMaxRule,
    pub autorun: AutorunConfig,
    pub save_checkpoint: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            arch: Arch::Mlp {
                input_dim: 2,
                hidden: 16,
                depth: 2,
            },
            dataset: DatasetConfig::default(),
            optimizer: OptimizerConfig::default(),
            total_steps: 600,
            batch_size: 32,
            unfreeze: UnfreezeConfig::default(),
            warmup: WarmupConfig::default(),
            penalty: FisherPenaltyConfig::disabled(),
            sharpness: SharpnessConfig::default(),
            fisher_mode: FisherMode::Exact,
            detector: DetectorConfig::default(),
            stride: 10,
            metrics: MetricToggles::default(),
            metric_sample_size: eseize_core::data::METRIC_SAMPLE_SIZE,
            ood_seed: 0,
            seeds: vec![0],
            k_max_rule: KMaxRule::EqualDivision,
            autorun: AutorunConfig::default(),
            save_checkpoint: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.total_steps == 0 || self.batch_size == 0 || self.stride == 0 {
            return bad("total_steps, batch_size and stride must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.metric_sample_size == 0 {
            return bad("metric_sample_size must be positive".into());
        }
        if self.arch.n_blocks() == 0 {
            return bad("the network needs at least one block below the head".into());
        }
        if self.unfreeze.k > self.k_max() {
            return bad(format!("k = {} exceeds k_max = {}", self.unfreeze.k, self.k_max()));
        }
        self.sharpness.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.penalty.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.detector.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if !(self.optimizer.lr > 0.0 && self.optimizer.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.optimizer.lr));
        }
        if !(self.warmup.divisor >= 1.0 && self.warmup.divisor.is_finite()) {
            return bad(format!("warm-up divisor must be >= 1, got {}", self.warmup.divisor));
        }
        for m in &self.autorun.metrics {
            if !crate::trace::METRIC_COLUMNS.contains(&m.as_str()) {
                return bad(format!("unknown autorun metric {m:?}"));
            }
        }
        if self.autorun.n_random == 0 {
            return bad("autorun.n_random must be positive".into());
        }
        Ok(())
    }

    /// Largest unfreezing interval: total steps divided equally among blocks.
    pub fn k_max(&self) -> u64 {
        match self.k_max_rule {
            KMaxRule::EqualDivision => self.total_steps / self.arch.n_blocks().max(1) as u64,
        }
    }

    /// Hash of everything except the seed list, so that all seeds of one
    /// experiment share it.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.seeds.clear();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest[..6].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn with_k(&self, k: u64) -> Self {
        let mut c = self.clone();
        c.unfreeze.k = k;
        c
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

pub fn run_dir_name(config_hash: &str, seed: u64) -> String {
    format!("run_{config_hash}_{seed}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.stride, 10);
        assert_eq!(c.detector.tau, 3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"total_stepz": 5}"#),
            Err(HarnessError::Config(_))
        ));
        assert!(ExperimentConfig::from_json(r#"{"penalty": {"alpha": 0.1, "beta": 1}}"#).is_err());
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"schema_version": 2}"#).is_err());
    }

    #[test]
    fn k_above_k_max_is_rejected() {
        let text = r#"{"total_steps": 100, "arch": {"kind": "mlp", "input_dim": 2, "hidden": 4, "depth": 4}, "unfreeze": {"k": 26}}"#;
        assert!(ExperimentConfig::from_json(text).is_err());
        let ok = text.replace("26", "25");
        assert_eq!(ExperimentConfig::from_json(&ok).unwrap().k_max(), 25);
    }

    #[test]
    fn hash_ignores_seeds_but_not_settings() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            seeds: vec![4, 5],
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), a.with_k(3).hash());
        assert_eq!(a.hash().len(), 12);
        assert_eq!(run_dir_name("abc", 7), "run_abc_7");
    }

    #[test]
    fn roundtrip_through_json() {
        let c = ExperimentConfig {
            dataset: DatasetConfig::Idx {
                dir: Some("/tmp/x".into()),
                downsample_14: true,
                train_n: Some(10),
                test_n: None,
            },
            ..ExperimentConfig::default()
        };
        assert_eq!(ExperimentConfig::from_json(&c.to_json_pretty()).unwrap(), c);
    }
}

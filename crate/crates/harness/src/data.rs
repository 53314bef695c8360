use eseize_core::data::{
    feature_ood_suite, load_idx, make_synthetic, ood_suite, CorruptionSpec, Dataset, IdxOptions, Split,
};

use crate::config::{DatasetConfig, ExperimentConfig};
use crate::error::{HarnessError, Result};

/// Training data, clean test data and the corrupted test suite, built once
/// and shared by every run of an experiment.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub suite: Vec<(CorruptionSpec, Dataset)>,
}

impl Prepared {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let (train, test) = match &cfg.dataset {
            DatasetConfig::Idx {
                dir,
                downsample_14,
                train_n,
                test_n,
            } => {
                let dir = DatasetConfig::idx_dir(dir);
                let file = |name: &str| {
                    let p = dir.join(name);
                    if p.exists() {
                        Ok(p)
                    } else {
                        Err(HarnessError::Config(format!("missing IDX file {}", p.display())))
                    }
                };
                let opts = |n: &Option<usize>| IdxOptions {
                    downsample_14: *downsample_14,
                    subset_n: *n,
                };
                let train = load_idx(
                    &file("train-images-idx3-ubyte")?,
                    &file("train-labels-idx1-ubyte")?,
                    opts(train_n),
                    Split::Train,
                )?;
                let test = load_idx(
                    &file("t10k-images-idx3-ubyte")?,
                    &file("t10k-labels-idx1-ubyte")?,
                    opts(test_n),
                    Split::Test,
                )?;
                (train, test)
            }
            DatasetConfig::Synthetic {
                task,
                n_train,
                n_test,
                noise_sd,
                seed,
            } => (
                make_synthetic(*task, *n_train, *noise_sd, *seed, Split::Train)?,
                make_synthetic(*task, *n_test, *noise_sd, seed.wrapping_add(1), Split::Test)?,
            ),
        };
        Self::from_parts(cfg, train, test)
    }

    pub fn from_parts(cfg: &ExperimentConfig, train: Dataset, test: Dataset) -> Result<Self> {
        if train.n_features() != cfg.arch.input_dim() {
            return Err(HarnessError::Config(format!(
                "network expects {} inputs, dataset has {}",
                cfg.arch.input_dim(),
                train.n_features()
            )));
        }
        if train.len() < cfg.batch_size {
            return Err(HarnessError::Config(format!(
                "batch size {} exceeds {} training examples",
                cfg.batch_size,
                train.len()
            )));
        }
        let suite = if test.side.is_some() {
            ood_suite(&test, cfg.ood_seed)?
        } else {
            feature_ood_suite(&test, cfg.ood_seed)?
        };
        Ok(Self { train, test, suite })
    }
}

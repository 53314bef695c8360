//! In-distribution datasets and covariate-shift evaluation suites.

mod corrupt;
mod idx;
mod synthetic;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{PrngStreams, Stream};
use crate::tensor::Tensor;

pub use corrupt::{corrupt, feature_ood_suite, ood_suite, CorruptionKind, CorruptionSpec};
pub use idx::{idx_dataset, load_idx, parse_idx_images, parse_idx_labels, IdxImages, IdxOptions};
pub use synthetic::{make_synthetic, write_csv, SyntheticTask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Feature rows in `[0, 1]` with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub y: Vec<usize>,
    pub n_classes: usize,
    pub split: Split,
    /// Side length when each row is a square single-channel image.
    pub side: Option<usize>,
}

impl Dataset {
    pub fn new(x: Tensor, y: Vec<usize>, n_classes: usize, split: Split, side: Option<usize>) -> Result<Self> {
        if x.shape().len() != 2 || x.rows() != y.len() {
            return Err(Error::input(format!("{} labels for {:?} features", y.len(), x.shape())));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
            return Err(Error::input(format!("label {bad} out of range for {n_classes} classes")));
        }
        if let Some(s) = side {
            if s * s != x.cols() {
                return Err(Error::input(format!("side {s} does not match {} features", x.cols())));
            }
        }
        if x.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::input("feature values must lie in [0, 1]"));
        }
        Ok(Self {
            x,
            y,
            n_classes,
            split,
            side,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            n_classes: self.n_classes,
            split: self.split,
            side: self.side,
        }
    }

    /// First `n` rows (or all of them).
    pub fn prefix(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

/// Fixed, un-augmented slice of the training set used for every metric
/// evaluation in a run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSample {
    pub indices: Vec<usize>,
    pub x: Tensor,
    pub y: Vec<usize>,
    fingerprint: [u8; 32],
}

pub const METRIC_SAMPLE_SIZE: usize = 2048;

/// Shuffle-stream substream reserved for drawing the metric sample; epoch
/// shuffles use substreams `0, 1, ...`.
pub const METRIC_SAMPLE_SUBSTREAM: u64 = u64::MAX;

impl MetricSample {
    pub fn draw(train: &Dataset, size: usize, streams: &PrngStreams) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::input("cannot draw a metric sample from an empty dataset"));
        }
        let n = size.min(train.len());
        let mut rng = streams.substream(Stream::Shuffle, METRIC_SAMPLE_SUBSTREAM);
        let mut indices = rand::seq::index::sample(&mut rng, train.len(), n).into_vec();
        indices.sort_unstable();
        let sub = train.subset(&indices);
        let fingerprint = fingerprint(&sub.x, &sub.y);
        Ok(Self {
            indices,
            x: sub.x,
            y: sub.y,
            fingerprint,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn fingerprint(&self) -> [u8; 32] {
        self.fingerprint
    }

    /// Recomputes the content hash and compares it with the one taken at draw time.
    pub fn verify(&self) -> Result<()> {
        if fingerprint(&self.x, &self.y) != self.fingerprint {
            return Err(Error::contract("metric sample changed after it was drawn"));
        }
        Ok(())
    }
}

fn fingerprint(x: &Tensor, y: &[usize]) -> [u8; 32] {
    let mut h = Sha256::new();
    for v in x.data() {
        h.update(v.to_le_bytes());
    }
    for &c in y {
        h.update((c as u64).to_le_bytes());
    }
    h.finalize().into()
}

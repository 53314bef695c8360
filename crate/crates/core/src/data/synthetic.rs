//! Two-dimensional toy tasks.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticTask {
    /// Two concentric rings of radius 0.25 (class 0) and 0.45 (class 1).
    TwoRings,
    /// Four classes centred at the corners `(0.25 | 0.75)^2`.
    GaussBlobs,
}

const RING_RADII: [f64; 2] = [0.25, 0.45];
const BLOB_MEANS: [[f64; 2]; 4] = [[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]];

impl SyntheticTask {
    pub fn n_classes(self) -> usize {
        match self {
            SyntheticTask::TwoRings => 2,
            SyntheticTask::GaussBlobs => 4,
        }
    }
}

/// Example `i` has class `i mod C`, so classes are balanced up to one.
pub fn make_synthetic(task: SyntheticTask, n: usize, noise_sd: f64, seed: u64, split: Split) -> Result<Dataset> {
    if n < 4 {
        return Err(Error::input(format!("synthetic datasets need n >= 4, got {n}")));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::input(format!("noise_sd must be finite and >= 0, got {noise_sd}")));
    }
    let mut rng = rng_from_seed(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let c = task.n_classes();
    let mut data = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % c;
        let (px, py) = match task {
            SyntheticTask::TwoRings => {
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                let r = RING_RADII[class];
                (0.5 + r * theta.cos(), 0.5 + r * theta.sin())
            }
            SyntheticTask::GaussBlobs => (BLOB_MEANS[class][0], BLOB_MEANS[class][1]),
        };
        let nx: f64 = normal.sample(&mut rng);
        let ny: f64 = normal.sample(&mut rng);
        data.push((px + noise_sd * nx).clamp(0.0, 1.0));
        data.push((py + noise_sd * ny).clamp(0.0, 1.0));
        y.push(class);
    }
    Dataset::new(Tensor::from_vec(&[n, 2], data)?, y, c, split, None)
}

/// CSV with columns `x0, x1, ..., label`.
pub fn write_csv<W: Write>(dataset: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = dataset.n_features();
    let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(csv_err)?;
    for (i, &label) in dataset.y.iter().enumerate() {
        let mut rec: Vec<String> = dataset.x.row(i).iter().map(|v| format!("{v:?}")).collect();
        rec.push(label.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

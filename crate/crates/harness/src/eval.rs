//! In-distribution and corrupted-suite accuracy. Accuracies are percentages.

use eseize_core::data::{CorruptionKind, CorruptionSpec, Dataset};
use eseize_core::nn::Model;
use serde::{Deserialize, Serialize};

use crate::error::Result;

const EVAL_CHUNK: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodCell {
    pub corruption: CorruptionKind,
    pub severity: u8,
    pub acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub id_acc: f64,
    pub ood_mean: f64,
    pub ood: Vec<OodCell>,
}

/// Top-1 accuracy in percent; ties go to the lowest class index.
pub fn accuracy(model: &Model, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let c = model.n_classes();
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let sub = data.subset(chunk);
        let logits = model.forward(&sub.x)?;
        for (row, &label) in sub.y.iter().enumerate() {
            let z = &logits.data()[row * c..(row + 1) * c];
            let pred = (0..c).fold(0, |b, j| if z[j] > z[b] { j } else { b });
            correct += usize::from(pred == label);
        }
    }
    Ok(100.0 * correct as f64 / data.len() as f64)
}

/// Clean accuracy plus one accuracy per suite member; `ood_mean` is their
/// unweighted mean.
pub fn evaluate(model: &Model, test: &Dataset, suite: &[(CorruptionSpec, Dataset)]) -> Result<EvalResult> {
    let id_acc = accuracy(model, test)?;
    let mut ood = Vec::with_capacity(suite.len());
    for (spec, ds) in suite {
        ood.push(OodCell {
            corruption: spec.kind,
            severity: spec.severity,
            acc: accuracy(model, ds)?,
        });
    }
    let ood_mean = if ood.is_empty() {
        f64::NAN
    } else {
        ood.iter().map(|c| c.acc).sum::<f64>() / ood.len() as f64
    };
    Ok(EvalResult { id_acc, ood_mean, ood })
}

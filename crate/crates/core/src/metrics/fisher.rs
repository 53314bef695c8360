use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Model, Scope};
use crate::rng::{PrngStreams, Stream};
use crate::tensor::Tensor;

const MAX_EXACT_CLASSES: usize = 32;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FisherMode {
    /// Full expectation over the model's predictive distribution.
    #[default]
    Exact,
    /// One label per input sampled from the model's predictive distribution.
    Mc1,
}

/// Trace of the empirical Fisher information with labels drawn from the
/// model itself, per parameter in `scope`:
/// `(1/|D|) sum_x E_{c ~ p(.|x)} ||grad log p(c|x)||^2 / P`.
///
/// `call` selects the `label_sample` substream used by [`FisherMode::Mc1`].
pub fn trace_fisher(
    model: &Model,
    x: &Tensor,
    scope: &Scope,
    mode: FisherMode,
    streams: &PrngStreams,
    call: u64,
) -> Result<f64> {
    if x.rows() == 0 {
        return Err(Error::input("empty metric sample"));
    }
    let p = scope.n_params(model);
    if p == 0 {
        return Err(Error::input("empty parameter scope"));
    }
    let c = model.n_classes();
    if mode == FisherMode::Exact && c > MAX_EXACT_CLASSES {
        return Err(Error::input(format!("exact Fisher trace supports at most {MAX_EXACT_CLASSES} classes")));
    }
    let s = model.class_score_sq_norms(x, scope)?;
    let n = x.rows();
    let mut total = 0.0;
    match mode {
        FisherMode::Exact => {
            for i in 0..n * c {
                total += s.probs[i] * s.sq_norms[i];
            }
        }
        FisherMode::Mc1 => {
            let mut rng = streams.substream(Stream::LabelSample, call);
            for row in 0..n {
                let u: f64 = rng.random();
                let probs = &s.probs[row * c..(row + 1) * c];
                let mut acc = 0.0;
                let mut pick = c - 1;
                for (j, &pj) in probs.iter().enumerate() {
                    acc += pj;
                    if u < acc {
                        pick = j;
                        break;
                    }
                }
                total += s.sq_norms[row * c + pick];
            }
        }
    }
    let trf = total / n as f64 / p as f64;
    if !trf.is_finite() {
        return Err(Error::NonFinite("Fisher trace".into()));
    }
    Ok(trf)
}

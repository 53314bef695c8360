use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Model, Scope};
use crate::tensor::Tensor;

const MIN_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GsRecord {
    pub step: u64,
    /// A block id, or `"global"` for all blocks.
    pub scope: String,
    pub gs: f64,
}

/// Mean cosine between each gradient in `batch_grads` and `full`.
pub fn mean_cosine(batch_grads: &[Vec<f64>], full: &[f64]) -> Result<f64> {
    if batch_grads.is_empty() {
        return Err(Error::input("no minibatch gradients"));
    }
    let fnorm = full.iter().map(|v| v * v).sum::<f64>().sqrt();
    if fnorm < MIN_NORM {
        return Err(Error::DegenerateGradient(format!("full-batch gradient norm {fnorm:e}")));
    }
    let mut total = 0.0;
    for (b, g) in batch_grads.iter().enumerate() {
        if g.len() != full.len() {
            return Err(Error::Shape {
                expected: vec![full.len()],
                got: vec![g.len()],
            });
        }
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm < MIN_NORM {
            return Err(Error::DegenerateGradient(format!("minibatch {b} gradient norm {gnorm:e}")));
        }
        let dot: f64 = g.iter().zip(full).map(|(a, b)| a * b).sum();
        total += dot / (gnorm * fnorm);
    }
    Ok(total / batch_grads.len() as f64)
}

/// Gradient similarity of `minibatches` against the gradient of their union,
/// restricted to `scope` (trainable flags are ignored; this is a diagnostic).
pub fn grad_similarity(
    model: &Model,
    minibatches: &[(Tensor, Vec<usize>)],
    scope: &Scope,
    scope_name: &str,
    step: u64,
) -> Result<GsRecord> {
    if minibatches.is_empty() {
        return Err(Error::input("no minibatches"));
    }
    let mut grads = Vec::with_capacity(minibatches.len());
    let d = model.input_dim();
    let mut all_x = Vec::new();
    let mut all_y = Vec::new();
    for (x, y) in minibatches {
        let (_, g) = model.loss_and_grad_any(x, y, scope)?;
        grads.push(g.flatten(model));
        all_x.extend_from_slice(x.data());
        all_y.extend_from_slice(y);
    }
    let union = Tensor::from_vec(&[all_y.len(), d], all_x)?;
    let (_, full) = model.loss_and_grad_any(&union, &all_y, scope)?;
    let gs = mean_cosine(&grads, &full.flatten(model))?;
    Ok(GsRecord {
        step,
        scope: scope_name.to_string(),
        gs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Arch;
    use crate::rng::PrngStreams;

    #[test]
    fn identical_gradients_give_one() {
        let g = vec![0.3, -1.0, 2.0];
        let gs = mean_cosine(&[g.clone(), g.clone()], &g).unwrap();
        assert!((gs - 1.0).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_pair_gives_cos_45() {
        let g1 = vec![1.0, 0.0];
        let g2 = vec![0.0, 1.0];
        let full = vec![0.5, 0.5];
        let gs = mean_cosine(&[g1, g2], &full).unwrap();
        assert!((gs - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn opposite_gradients_are_degenerate() {
        let g1 = vec![1.0, -2.0];
        let g2 = vec![-1.0, 2.0];
        let full: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| (a + b) / 2.0).collect();
        assert!(matches!(mean_cosine(&[g1, g2], &full), Err(Error::DegenerateGradient(_))));
    }

    #[test]
    fn model_similarity_is_bounded() {
        let arch = Arch::Mlp {
            input_dim: 3,
            hidden: 4,
            depth: 2,
        };
        let m = Model::new(arch, 3, &PrngStreams::new(1)).unwrap();
        let batches: Vec<(Tensor, Vec<usize>)> = (0..4)
            .map(|b| {
                let x = (0..6).map(|i| ((b * 7 + i * 3) % 10) as f64 / 10.0).collect();
                (Tensor::from_vec(&[2, 3], x).unwrap(), vec![b % 3, (b + 1) % 3])
            })
            .collect();
        let r = grad_similarity(&m, &batches, &Scope::all(&m), "global", 10).unwrap();
        assert!(r.gs.abs() <= 1.0 + 1e-12);
        assert_eq!(r.scope, "global");
        let single = grad_similarity(&m, &batches[..1], &Scope::all(&m), "global", 10).unwrap();
        assert!((single.gs - 1.0).abs() < 1e-12);
    }
}

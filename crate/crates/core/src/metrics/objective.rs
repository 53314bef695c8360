use crate::error::{Error, Result};
use crate::nn::{Activation, Model, Scope};
use crate::tensor::Tensor;

/// A loss over a flat parameter vector, evaluated around a base point.
pub trait Objective {
    fn base(&self) -> &[f64];
    fn loss_at(&self, w: &[f64]) -> Result<f64>;
    fn loss_grad_at(&self, w: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Mean cross-entropy of a model on fixed data as a function of the
/// parameters in `scope`; everything below the scope is cached once.
#[derive(Debug, Clone)]
pub struct ModelObjective {
    model: Model,
    scope: Scope,
    act: Activation,
    y: Vec<usize>,
    w0: Vec<f64>,
}

impl ModelObjective {
    pub fn new(model: &Model, x: &Tensor, y: &[usize], scope: Scope) -> Result<Self> {
        let low = scope.lowest().ok_or_else(|| Error::input("empty parameter scope"))?;
        let act = model.activation_at(x, low)?;
        Ok(Self {
            w0: model.flat_params(&scope),
            model: model.clone(),
            scope,
            act,
            y: y.to_vec(),
        })
    }

    /// Objective over the currently trainable blocks.
    pub fn trainable(model: &Model, x: &Tensor, y: &[usize]) -> Result<Self> {
        Self::new(model, x, y, Scope::trainable(model))
    }

    fn with_params(&self, w: &[f64]) -> Result<Model> {
        let mut m = self.model.clone();
        m.set_flat_params(&self.scope, w)?;
        Ok(m)
    }
}

impl Objective for ModelObjective {
    fn base(&self) -> &[f64] {
        &self.w0
    }

    fn loss_at(&self, w: &[f64]) -> Result<f64> {
        self.with_params(w)?.loss_from(&self.act, &self.y)
    }

    fn loss_grad_at(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        let m = self.with_params(w)?;
        let (loss, g) = m.loss_and_grad_from(&self.act, &self.y, &self.scope)?;
        Ok((loss, g.flatten(&m)))
    }
}

/// `L(w) = 1/2 sum_i lambda_i (w_i - m_i)^2 + shift`, evaluated around `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagQuadratic {
    pub lambda: Vec<f64>,
    pub minimum: Vec<f64>,
    pub shift: f64,
    pub base: Vec<f64>,
}

impl DiagQuadratic {
    pub fn at_minimum(lambda: Vec<f64>) -> Self {
        let n = lambda.len();
        Self {
            lambda,
            minimum: vec![0.0; n],
            shift: 0.0,
            base: vec![0.0; n],
        }
    }
}

impl Objective for DiagQuadratic {
    fn base(&self) -> &[f64] {
        &self.base
    }

    fn loss_at(&self, w: &[f64]) -> Result<f64> {
        let mut s = 0.0;
        for i in 0..w.len() {
            let d = w[i] - self.minimum[i];
            s += 0.5 * self.lambda[i] * d * d;
        }
        Ok(s + self.shift)
    }

    fn loss_grad_at(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        let g = (0..w.len()).map(|i| self.lambda[i] * (w[i] - self.minimum[i])).collect();
        Ok((self.loss_at(w)?, g))
    }
}

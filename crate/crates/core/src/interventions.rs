//! Gradual unfreezing, step warm-up and the delayed Fisher penalty, plus the
//! single training step that composes them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{ModelObjective, Objective};
use crate::nn::{Gradients, Model, OptimizerState, Scope};
use crate::tensor::Tensor;

const MIN_GRAD_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnfreezeOrder {
    /// Head first, then the blocks nearest to it.
    #[default]
    TopDown,
    BottomUp,
}

/// Unfreezes one block every `k` steps; `k = 0` trains everything from the
/// start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnfreezeSchedule {
    pub k: u64,
    pub n_blocks: usize,
    pub order: UnfreezeOrder,
}

impl UnfreezeSchedule {
    pub fn new(k: u64, n_blocks: usize, order: UnfreezeOrder) -> Self {
        Self { k, n_blocks, order }
    }

    pub fn standard(n_blocks: usize) -> Self {
        Self::new(0, n_blocks, UnfreezeOrder::TopDown)
    }

    /// Number of non-head blocks trainable during `step` (1-based).
    pub fn n_unfrozen(&self, step: u64) -> Result<usize> {
        if step == 0 {
            return Err(Error::input("steps are numbered from 1"));
        }
        if self.k == 0 {
            return Ok(self.n_blocks);
        }
        Ok((step / self.k).min(self.n_blocks as u64) as usize)
    }

    /// True if `step` unfreezes a block before its update.
    pub fn is_event(&self, step: u64) -> bool {
        self.k > 0 && step > 0 && step % self.k == 0 && step / self.k <= self.n_blocks as u64
    }

    /// Step at which every block is trainable.
    pub fn full_at(&self) -> u64 {
        if self.k == 0 {
            1
        } else {
            self.k.saturating_mul(self.n_blocks as u64)
        }
    }

    /// Depths of trainable non-head blocks during `step`, ascending.
    pub fn trainable_depths(&self, step: u64) -> Result<Vec<usize>> {
        let n = self.n_unfrozen(step)?;
        let l = self.n_blocks;
        Ok(match self.order {
            UnfreezeOrder::TopDown => (l - n..l).collect(),
            UnfreezeOrder::BottomUp => (0..n).collect(),
        })
    }

    /// Block ids trainable during `step`, bottom to top, head last.
    pub fn trainable_set(&self, step: u64) -> Result<Vec<String>> {
        let mut ids: Vec<String> = self.trainable_depths(step)?.into_iter().map(crate::nn::block_id).collect();
        ids.push(crate::nn::HEAD_ID.to_string());
        Ok(ids)
    }

    /// Sets the model's trainable flags for `step`.
    pub fn apply(&self, model: &mut Model, step: u64) -> Result<()> {
        if model.n_blocks() != self.n_blocks {
            return Err(Error::contract(format!(
                "schedule has {} blocks, model has {}",
                self.n_blocks,
                model.n_blocks()
            )));
        }
        let depths = self.trainable_depths(step)?;
        for d in 0..self.n_blocks {
            model.set_trainable(&crate::nn::block_id(d), depths.contains(&d))?;
        }
        model.set_trainable(crate::nn::HEAD_ID, true)
    }
}

/// Single-step learning-rate warm-up: `base_lr / divisor` before
/// `switch_step`, `base_lr` from it on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarmupSchedule {
    pub base_lr: f64,
    pub divisor: f64,
    pub switch_step: u64,
}

impl WarmupSchedule {
    pub fn constant(base_lr: f64) -> Self {
        Self {
            base_lr,
            divisor: 1.0,
            switch_step: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::input(format!("learning rate must be positive, got {}", self.base_lr)));
        }
        if !(self.divisor >= 1.0 && self.divisor.is_finite()) {
            return Err(Error::input(format!("warm-up divisor must be >= 1, got {}", self.divisor)));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        if step < self.switch_step {
            self.base_lr / self.divisor
        } else {
            self.base_lr
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FisherPenaltyConfig {
    pub alpha: f64,
    pub every: u64,
    pub delay: u64,
    pub hvp_eps: f64,
}

impl Default for FisherPenaltyConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            every: 10,
            delay: 0,
            hvp_eps: 1e-3,
        }
    }
}

impl FisherPenaltyConfig {
    pub fn disabled() -> Self {
        Self {
            alpha: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::input(format!("penalty alpha must be >= 0, got {}", self.alpha)));
        }
        if self.every == 0 {
            return Err(Error::input("penalty cadence must be at least 1"));
        }
        if !(self.hvp_eps > 0.0 && self.hvp_eps.is_finite()) {
            return Err(Error::input("hvp_eps must be positive"));
        }
        Ok(())
    }

    pub fn is_active(&self, step: u64) -> bool {
        self.alpha > 0.0 && step >= self.delay && (step - self.delay) % self.every == 0
    }
}

/// `alpha * grad(||grad J||^2 / P)` at the objective's base point, with the
/// Hessian-vector product taken by central differences along `g/||g||`.
/// Returns zeros when the gradient vanishes or `alpha` is 0.
pub fn penalty_gradient<O: Objective>(obj: &O, alpha: f64, hvp_eps: f64) -> Result<Vec<f64>> {
    let w = obj.base();
    let p = w.len();
    if p == 0 {
        return Err(Error::input("empty parameter scope"));
    }
    if alpha == 0.0 {
        return Ok(vec![0.0; p]);
    }
    let (_, g) = obj.loss_grad_at(w)?;
    let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !gn.is_finite() {
        return Err(Error::NonFinite("gradient for Fisher penalty".into()));
    }
    if gn < MIN_GRAD_NORM {
        return Ok(vec![0.0; p]);
    }
    let shifted = |sign: f64| -> Vec<f64> { w.iter().zip(&g).map(|(wi, gi)| wi + sign * hvp_eps * gi / gn).collect() };
    let (_, gp) = obj.loss_grad_at(&shifted(1.0))?;
    let (_, gm) = obj.loss_grad_at(&shifted(-1.0))?;
    let scale = 2.0 * gn * alpha / p as f64;
    let out: Vec<f64> = gp
        .iter()
        .zip(&gm)
        .map(|(a, b)| scale * (a - b) / (2.0 * hvp_eps))
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Fisher penalty gradient".into()));
    }
    Ok(out)
}

/// Fisher-penalty gradient on a minibatch over the trainable blocks, in the
/// same block layout as a task gradient.
pub fn fisher_penalty_grad(model: &Model, x: &Tensor, y: &[usize], cfg: &FisherPenaltyConfig) -> Result<Gradients> {
    cfg.validate()?;
    if !model.head().trainable {
        return Err(Error::contract("Fisher penalty needs a trainable head"));
    }
    let scope = Scope::trainable(model);
    let obj = ModelObjective::new(model, x, y, scope.clone())?;
    let flat = penalty_gradient(&obj, cfg.alpha, cfg.hvp_eps)?;
    let mut template = Gradients::new();
    for id in scope.ids(model) {
        let block = model.block(&id).expect("scope ids come from the model");
        template.insert(id.clone(), block.params.iter().map(|t| Tensor::zeros(t.shape())).collect());
    }
    Gradients::unflatten_like(&template, model, &flat)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interventions {
    pub unfreeze: UnfreezeSchedule,
    pub warmup: WarmupSchedule,
    pub penalty: FisherPenaltyConfig,
}

impl Interventions {
    pub fn none(n_blocks: usize, lr: f64) -> Self {
        Self {
            unfreeze: UnfreezeSchedule::standard(n_blocks),
            warmup: WarmupSchedule::constant(lr),
            penalty: FisherPenaltyConfig::disabled(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.warmup.validate()?;
        self.penalty.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub lr: f64,
    pub penalty_applied: bool,
    pub unfreeze_event: bool,
}

/// One optimizer step at `step` (1-based): trainable flags and learning rate
/// from the schedules, task gradient over the trainable blocks, plus the
/// Fisher penalty when it is due.
pub fn apply_interventions(
    step: u64,
    iv: &Interventions,
    opt: &mut OptimizerState,
    model: &mut Model,
    x: &Tensor,
    y: &[usize],
) -> Result<StepOutcome> {
    iv.unfreeze.apply(model, step)?;
    let lr = iv.warmup.lr_at(step);
    opt.lr = lr;
    let scope = Scope::trainable(model);
    let (loss, mut grads) = model.loss_and_grad(x, y, &scope)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("training loss at step {step}")));
    }
    let penalty_applied = iv.penalty.is_active(step);
    if penalty_applied {
        let pg = fisher_penalty_grad(model, x, y, &iv.penalty)?;
        grads.add_scaled(&pg, 1.0)?;
    }
    opt.step(model, &grads)?;
    Ok(StepOutcome {
        loss,
        lr,
        penalty_applied,
        unfreeze_event: iv.unfreeze.is_event(step),
    })
}

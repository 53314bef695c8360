//! SGD with momentum and AdamW, with per-block state.
//!
//! Moment buffers are created lazily the first time a block receives a
//! gradient, so blocks that stay frozen never get state and AdamW bias
//! correction starts counting at a block's first update.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::grads::Gradients;
use crate::nn::model::Model;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    SgdMomentum {
        momentum: f64,
        #[serde(default)]
        weight_decay: f64,
    },
    Adamw {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default = "default_wd")]
        weight_decay: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_wd() -> f64 {
    0.01
}

impl OptimizerKind {
    pub fn adamw_default() -> Self {
        OptimizerKind::Adamw {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay: default_wd(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct BlockState {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    pub lr: f64,
    state: BTreeMap<String, BlockState>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            state: BTreeMap::new(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Ids of blocks that have moment buffers.
    pub fn tracked_blocks(&self) -> impl Iterator<Item = &str> {
        self.state.keys().map(String::as_str)
    }

    /// Applies one update. Every gradient key must name a trainable block;
    /// the model is left untouched if any does not.
    pub fn step(&mut self, model: &mut Model, grads: &Gradients) -> Result<()> {
        for (id, ts) in grads.iter() {
            let block = model
                .block(id)
                .ok_or_else(|| Error::contract(format!("gradient for unknown block {id:?}")))?;
            if !block.trainable {
                return Err(Error::contract(format!("gradient supplied for frozen block {id:?}")));
            }
            if ts.len() != block.params.len() || ts.iter().zip(&block.params).any(|(g, p)| g.shape() != p.shape()) {
                return Err(Error::contract(format!("gradient shapes differ for block {id:?}")));
            }
        }
        let lr = self.lr;
        for (id, ts) in grads.iter() {
            let idx = model.index_of(id).expect("validated above");
            let block = model.block_at_mut(idx);
            let st = self.state.entry(id.to_string()).or_insert_with(|| BlockState {
                step: 0,
                m: block.params.iter().map(|p| vec![0.0; p.len()]).collect(),
                v: match self.kind {
                    OptimizerKind::Adamw { .. } => block.params.iter().map(|p| vec![0.0; p.len()]).collect(),
                    OptimizerKind::SgdMomentum { .. } => Vec::new(),
                },
            });
            st.step += 1;
            match self.kind {
                OptimizerKind::SgdMomentum { momentum, weight_decay } => {
                    for ((p, g), buf) in block.params.iter_mut().zip(ts).zip(st.m.iter_mut()) {
                        for ((w, &gi), b) in p.data_mut().iter_mut().zip(g.data()).zip(buf.iter_mut()) {
                            let d = gi + weight_decay * *w;
                            *b = if st.step == 1 { d } else { momentum * *b + d };
                            *w -= lr * *b;
                        }
                    }
                }
                OptimizerKind::Adamw {
                    beta1,
                    beta2,
                    eps,
                    weight_decay,
                } => {
                    let t = st.step as i32;
                    let bc1 = 1.0 - beta1.powi(t);
                    let bc2_sqrt = (1.0 - beta2.powi(t)).sqrt();
                    let step_size = lr / bc1;
                    for (((p, g), m), v) in block.params.iter_mut().zip(ts).zip(st.m.iter_mut()).zip(st.v.iter_mut()) {
                        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut())
                        {
                            *w *= 1.0 - lr * weight_decay;
                            *mi = beta1 * *mi + (1.0 - beta1) * gi;
                            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                            let denom = vi.sqrt() / bc2_sqrt + eps;
                            *w -= step_size * *mi / denom;
                        }
                    }
                }
            }
            if block.params.iter().any(|p| !p.all_finite()) {
                return Err(Error::NonFinite(format!("parameters of {id} after update")));
            }
        }
        Ok(())
    }
}

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::model::Model;
use crate::tensor::Tensor;

/// Gradient tensors keyed by block id; blocks outside the requested scope
/// are simply absent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    map: BTreeMap<String, Vec<Tensor>>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, tensors: Vec<Tensor>) {
        self.map.insert(id.into(), tensors);
    }

    pub fn get(&self, id: &str) -> Option<&[Tensor]> {
        self.map.get(id).map(Vec::as_slice)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.map.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[Tensor])> {
        self.map.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn sq_norm(&self) -> f64 {
        self.map.values().flatten().map(Tensor::sq_norm).sum()
    }

    /// `self += scale * other`; both maps must cover the same blocks.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) -> Result<()> {
        if self.map.len() != other.map.len() || self.map.keys().zip(other.map.keys()).any(|(a, b)| a != b) {
            return Err(Error::contract("gradient maps cover different blocks"));
        }
        for (mine, theirs) in self.map.values_mut().zip(other.map.values()) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                    *x += scale * y;
                }
            }
        }
        Ok(())
    }

    /// Concatenates the gradients in model block order (blocks by depth, then head).
    pub fn flatten(&self, model: &Model) -> Vec<f64> {
        let mut out = Vec::new();
        for id in model.block_ids() {
            if let Some(ts) = self.map.get(&id) {
                for t in ts {
                    out.extend_from_slice(t.data());
                }
            }
        }
        out
    }

    /// Inverse of [`Gradients::flatten`] using `template`'s block layout.
    pub fn unflatten_like(template: &Gradients, model: &Model, flat: &[f64]) -> Result<Gradients> {
        let mut out = Gradients::new();
        let mut off = 0;
        for id in model.block_ids() {
            if let Some(ts) = template.map.get(&id) {
                let mut v = Vec::with_capacity(ts.len());
                for t in ts {
                    let n = t.len();
                    let chunk = flat
                        .get(off..off + n)
                        .ok_or_else(|| Error::contract("flat gradient too short"))?;
                    v.push(Tensor::from_vec(t.shape(), chunk.to_vec())?);
                    off += n;
                }
                out.insert(id, v);
            }
        }
        if off != flat.len() {
            return Err(Error::contract("flat gradient too long"));
        }
        Ok(out)
    }
}

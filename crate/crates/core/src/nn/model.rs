//! Block-partitioned feed-forward classifiers with explicit backprop.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::grads::Gradients;
use crate::nn::layers::{self, BlockCache, BlockOp};
use crate::rng::{PrngStreams, Stream};
use crate::tensor::Tensor;

pub const HEAD_ID: &str = "head";

/// Network architecture descriptor.
///
/// `Mlp` stacks `depth` ReLU layers of width `hidden`; `SmallConv` is two
/// conv(3x3)+ReLU+maxpool(2x2) stages on a single-channel `side x side`
/// image, followed by one dense ReLU block. Both end in a linear head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Arch {
    Mlp {
        input_dim: usize,
        hidden: usize,
        depth: usize,
    },
    SmallConv {
        side: usize,
        c1: usize,
        c2: usize,
        dense: usize,
    },
}

impl Arch {
    pub fn input_dim(&self) -> usize {
        match *self {
            Arch::Mlp { input_dim, .. } => input_dim,
            Arch::SmallConv { side, .. } => side * side,
        }
    }

    /// Number of parameter blocks below the head (L).
    pub fn n_blocks(&self) -> usize {
        match *self {
            Arch::Mlp { depth, .. } => depth,
            Arch::SmallConv { .. } => 3,
        }
    }

    pub(crate) fn ops(&self, n_classes: usize) -> Result<Vec<BlockOp>> {
        let mut ops = Vec::new();
        let feat = match *self {
            Arch::Mlp {
                input_dim,
                hidden,
                depth,
            } => {
                if input_dim == 0 || (depth > 0 && hidden == 0) {
                    return Err(Error::input("mlp dimensions must be positive"));
                }
                let mut inp = input_dim;
                for _ in 0..depth {
                    ops.push(BlockOp::DenseRelu { inp, out: hidden });
                    inp = hidden;
                }
                inp
            }
            Arch::SmallConv { side, c1, c2, dense } => {
                if side < 4 || c1 == 0 || c2 == 0 || dense == 0 {
                    return Err(Error::input("smallconv needs side >= 4 and positive widths"));
                }
                ops.push(BlockOp::ConvStage {
                    c_in: 1,
                    c_out: c1,
                    h: side,
                    w: side,
                });
                let s1 = side / 2;
                ops.push(BlockOp::ConvStage {
                    c_in: c1,
                    c_out: c2,
                    h: s1,
                    w: s1,
                });
                let s2 = s1 / 2;
                ops.push(BlockOp::DenseRelu {
                    inp: c2 * s2 * s2,
                    out: dense,
                });
                dense
            }
        };
        if n_classes < 2 {
            return Err(Error::input("n_classes must be at least 2"));
        }
        ops.push(BlockOp::Linear {
            inp: feat,
            out: n_classes,
        });
        Ok(ops)
    }
}

/// One group of parameters that is frozen or unfrozen as a unit.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub id: String,
    /// 0 is the input-nearest block; the head sits at depth L.
    pub depth: usize,
    pub params: Vec<Tensor>,
    pub trainable: bool,
}

impl ParamBlock {
    pub fn n_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }
}

pub fn block_id(depth: usize) -> String {
    format!("block{depth}")
}

/// Which blocks a gradient computation covers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scope {
    members: Vec<bool>,
}

impl Scope {
    pub fn all(model: &Model) -> Self {
        Self {
            members: vec![true; model.n_blocks() + 1],
        }
    }

    pub fn head_only(model: &Model) -> Self {
        let mut members = vec![false; model.n_blocks() + 1];
        members[model.n_blocks()] = true;
        Self { members }
    }

    pub fn trainable(model: &Model) -> Self {
        Self {
            members: (0..=model.n_blocks()).map(|i| model.block_at(i).trainable).collect(),
        }
    }

    pub fn from_ids<S: AsRef<str>>(model: &Model, ids: &[S]) -> Result<Self> {
        let mut members = vec![false; model.n_blocks() + 1];
        for id in ids {
            let idx = model
                .index_of(id.as_ref())
                .ok_or_else(|| Error::input(format!("unknown block id {:?}", id.as_ref())))?;
            members[idx] = true;
        }
        Ok(Self { members })
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.members.get(idx).copied().unwrap_or(false)
    }

    pub fn is_empty(&self) -> bool {
        !self.members.iter().any(|&m| m)
    }

    /// Depth of the input-nearest block in scope.
    pub fn lowest(&self) -> Option<usize> {
        self.members.iter().position(|&m| m)
    }

    pub fn ids(&self, model: &Model) -> Vec<String> {
        (0..self.members.len())
            .filter(|&i| self.members[i])
            .map(|i| model.block_at(i).id.clone())
            .collect()
    }

    pub fn n_params(&self, model: &Model) -> usize {
        (0..self.members.len())
            .filter(|&i| self.members[i])
            .map(|i| model.block_at(i).n_params())
            .sum()
    }
}

/// Activations entering block `depth` for a batch, cached so that repeated
/// evaluations that only perturb blocks at or above `depth` skip the prefix.
#[derive(Debug, Clone)]
pub struct Activation {
    depth: usize,
    batch: usize,
    data: Vec<f64>,
}

impl Activation {
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Per-example class probabilities and squared score norms
/// `||grad log p(c|x_n)||^2`, both `[batch, n_classes]`.
#[derive(Debug, Clone)]
pub struct ScoreNorms {
    pub probs: Vec<f64>,
    pub sq_norms: Vec<f64>,
    pub n_classes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    arch: Arch,
    n_classes: usize,
    blocks: Vec<ParamBlock>,
    head: ParamBlock,
    ops: Vec<BlockOp>,
}

impl Model {
    /// Kaiming-uniform (fan-in) weights from the `init` stream, zero biases.
    pub fn new(arch: Arch, n_classes: usize, streams: &PrngStreams) -> Result<Self> {
        let mut rng = streams.stream(Stream::Init);
        Self::build(arch, n_classes, |op, shape, is_weight| {
            let n: usize = shape.iter().product();
            if !is_weight {
                return vec![0.0; n];
            }
            let gain2 = if matches!(op, BlockOp::Linear { .. }) { 1.0 } else { 2.0 };
            let bound = (3.0 * gain2 / op.fan_in() as f64).sqrt();
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        })
    }

    pub fn zeros(arch: Arch, n_classes: usize) -> Result<Self> {
        Self::build(arch, n_classes, |_, shape, _| vec![0.0; shape.iter().product()])
    }

    fn build(
        arch: Arch,
        n_classes: usize,
        mut fill: impl FnMut(&BlockOp, &[usize], bool) -> Vec<f64>,
    ) -> Result<Self> {
        let ops = arch.ops(n_classes)?;
        let l = ops.len() - 1;
        let mut all = Vec::with_capacity(ops.len());
        for (depth, op) in ops.iter().enumerate() {
            let params = op
                .param_shapes()
                .iter()
                .enumerate()
                .map(|(j, s)| Tensor::from_vec(s, fill(op, s, j == 0)))
                .collect::<Result<Vec<_>>>()?;
            all.push(ParamBlock {
                id: if depth == l { HEAD_ID.to_string() } else { block_id(depth) },
                depth,
                params,
                trainable: true,
            });
        }
        let head = all.pop().expect("head block");
        Ok(Self {
            arch,
            n_classes,
            blocks: all,
            head,
            ops,
        })
    }

    /// Rebuilds a model from explicit parameter tensors (checkpoint loading).
    pub fn from_params(arch: Arch, n_classes: usize, params: Vec<Vec<Tensor>>) -> Result<Self> {
        let mut model = Self::zeros(arch, n_classes)?;
        if params.len() != model.n_blocks() + 1 {
            return Err(Error::Format(format!(
                "expected {} blocks, found {}",
                model.n_blocks() + 1,
                params.len()
            )));
        }
        for (idx, ps) in params.into_iter().enumerate() {
            let block = model.block_at_mut(idx);
            if ps.len() != block.params.len() || ps.iter().zip(&block.params).any(|(a, b)| a.shape() != b.shape()) {
                return Err(Error::Format(format!("parameter shapes differ for {}", block.id)));
            }
            block.params = ps;
        }
        Ok(model)
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn head(&self) -> &ParamBlock {
        &self.head
    }

    pub fn input_dim(&self) -> usize {
        self.ops[0].in_size()
    }

    /// Width of the representation feeding the head.
    pub fn feat_dim(&self) -> usize {
        self.ops[self.n_blocks()].in_size()
    }

    /// Index `L` addresses the head.
    pub fn block_at(&self, idx: usize) -> &ParamBlock {
        if idx == self.blocks.len() {
            &self.head
        } else {
            &self.blocks[idx]
        }
    }

    pub fn block_at_mut(&mut self, idx: usize) -> &mut ParamBlock {
        if idx == self.blocks.len() {
            &mut self.head
        } else {
            &mut self.blocks[idx]
        }
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        if id == HEAD_ID {
            Some(self.blocks.len())
        } else {
            self.blocks.iter().position(|b| b.id == id)
        }
    }

    pub fn block(&self, id: &str) -> Option<&ParamBlock> {
        self.index_of(id).map(|i| self.block_at(i))
    }

    /// Block ids in depth order, head last.
    pub fn block_ids(&self) -> Vec<String> {
        (0..=self.n_blocks()).map(|i| self.block_at(i).id.clone()).collect()
    }

    pub fn set_trainable(&mut self, id: &str, trainable: bool) -> Result<()> {
        let idx = self
            .index_of(id)
            .ok_or_else(|| Error::input(format!("unknown block id {id:?}")))?;
        self.block_at_mut(idx).trainable = trainable;
        Ok(())
    }

    pub fn trainable_ids(&self) -> Vec<String> {
        Scope::trainable(self).ids(self)
    }

    pub fn n_params(&self) -> usize {
        (0..=self.n_blocks()).map(|i| self.block_at(i).n_params()).sum()
    }

    pub fn n_trainable_params(&self) -> usize {
        Scope::trainable(self).n_params(self)
    }

    /// Concatenated parameters of the scoped blocks in depth order.
    pub fn flat_params(&self, scope: &Scope) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..=self.n_blocks() {
            if scope.contains(i) {
                for t in &self.block_at(i).params {
                    out.extend_from_slice(t.data());
                }
            }
        }
        out
    }

    pub fn set_flat_params(&mut self, scope: &Scope, flat: &[f64]) -> Result<()> {
        if flat.len() != scope.n_params(self) {
            return Err(Error::Shape {
                expected: vec![scope.n_params(self)],
                got: vec![flat.len()],
            });
        }
        let mut off = 0;
        for i in 0..=self.n_blocks() {
            if scope.contains(i) {
                for t in &mut self.block_at_mut(i).params {
                    let n = t.len();
                    t.data_mut().copy_from_slice(&flat[off..off + n]);
                    off += n;
                }
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let batch = x.rows();
        if x.shape().len() != 2 || x.cols() != self.input_dim() {
            return Err(Error::Shape {
                expected: vec![batch, self.input_dim()],
                got: x.shape().to_vec(),
            });
        }
        Ok(batch)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let batch = self.check_input(x)?;
        let act = self.activation_at(x, 0)?;
        let logits = self.forward_from(&act)?;
        Tensor::from_vec(&[batch, self.n_classes], logits)
    }

    /// Activations feeding the classification head.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        let batch = self.check_input(x)?;
        let act = self.activation_at(x, self.n_blocks())?;
        Tensor::from_vec(&[batch, self.feat_dim()], act.data)
    }

    /// Runs blocks `0..depth` and returns the activation entering `depth`.
    pub fn activation_at(&self, x: &Tensor, depth: usize) -> Result<Activation> {
        let batch = self.check_input(x)?;
        if depth > self.n_blocks() {
            return Err(Error::input(format!("depth {depth} beyond head")));
        }
        let mut cur = x.data().to_vec();
        for idx in 0..depth {
            cur = self.block_forward(idx, &cur, batch, false).0;
        }
        Ok(Activation {
            depth,
            batch,
            data: cur,
        })
    }

    /// Logits from a cached activation.
    pub fn forward_from(&self, act: &Activation) -> Result<Vec<f64>> {
        let mut cur = std::borrow::Cow::Borrowed(act.data.as_slice());
        for idx in act.depth..=self.n_blocks() {
            cur = std::borrow::Cow::Owned(self.block_forward(idx, &cur, act.batch, false).0);
        }
        let logits = cur.into_owned();
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("logits".into()));
        }
        Ok(logits)
    }

    fn block_forward(&self, idx: usize, x: &[f64], batch: usize, keep: bool) -> (Vec<f64>, Option<BlockCache>) {
        let p = &self.block_at(idx).params;
        match self.ops[idx] {
            BlockOp::DenseRelu { inp, out } => {
                let mut z = layers::dense_forward(x, p[0].data(), p[1].data(), batch, inp, out);
                let mask: Vec<bool> = z.iter().map(|&v| v > 0.0).collect();
                for (v, &m) in z.iter_mut().zip(&mask) {
                    if !m {
                        *v = 0.0;
                    }
                }
                let cache = keep.then(|| BlockCache {
                    input: x.to_vec(),
                    mask,
                    argmax: Vec::new(),
                });
                (z, cache)
            }
            BlockOp::Linear { inp, out } => {
                let z = layers::dense_forward(x, p[0].data(), p[1].data(), batch, inp, out);
                let cache = keep.then(|| BlockCache {
                    input: x.to_vec(),
                    mask: Vec::new(),
                    argmax: Vec::new(),
                });
                (z, cache)
            }
            BlockOp::ConvStage { c_in, c_out, h, w } => {
                let mut z = layers::conv_forward(x, p[0].data(), p[1].data(), batch, c_in, c_out, h, w);
                let mask: Vec<bool> = z.iter().map(|&v| v > 0.0).collect();
                for (v, &m) in z.iter_mut().zip(&mask) {
                    if !m {
                        *v = 0.0;
                    }
                }
                let (y, argmax) = layers::maxpool_forward(&z, batch, c_out, h, w);
                let cache = keep.then(|| BlockCache {
                    input: x.to_vec(),
                    mask,
                    argmax,
                });
                (y, cache)
            }
        }
    }

    /// Gradient of the pre-activation given the gradient of the block output.
    fn pre_activation_grad(&self, idx: usize, cache: &BlockCache, g_out: &[f64], batch: usize) -> Vec<f64> {
        match self.ops[idx] {
            BlockOp::Linear { .. } => g_out.to_vec(),
            BlockOp::DenseRelu { .. } => g_out
                .iter()
                .zip(&cache.mask)
                .map(|(&g, &m)| if m { g } else { 0.0 })
                .collect(),
            BlockOp::ConvStage { c_out, h, w, .. } => {
                let mut gz = layers::maxpool_backward(g_out, &cache.argmax, batch * c_out * h * w);
                for (g, &m) in gz.iter_mut().zip(&cache.mask) {
                    if !m {
                        *g = 0.0;
                    }
                }
                gz
            }
        }
    }

    fn block_backward(
        &self,
        idx: usize,
        cache: &BlockCache,
        g_out: &[f64],
        batch: usize,
        want_params: bool,
        want_input: bool,
    ) -> Result<(Option<Vec<Tensor>>, Option<Vec<f64>>)> {
        let p = &self.block_at(idx).params;
        let gz = self.pre_activation_grad(idx, cache, g_out, batch);
        match self.ops[idx] {
            BlockOp::DenseRelu { inp, out } | BlockOp::Linear { inp, out } => {
                let (params, dx) =
                    layers::dense_backward(&cache.input, p[0].data(), &gz, batch, inp, out, want_params, want_input);
                let params = params
                    .map(|(gw, gb)| -> Result<Vec<Tensor>> {
                        Ok(vec![Tensor::from_vec(&[inp, out], gw)?, Tensor::from_vec(&[out], gb)?])
                    })
                    .transpose()?;
                Ok((params, dx))
            }
            BlockOp::ConvStage { c_in, c_out, h, w } => {
                let params = if want_params {
                    let mut gk = vec![0.0; c_out * c_in * 9];
                    let mut gb = vec![0.0; c_out];
                    for n in 0..batch {
                        layers::conv_param_grad_single(&cache.input, &gz, n, c_in, c_out, h, w, &mut gk, &mut gb);
                    }
                    Some(vec![
                        Tensor::from_vec(&[c_out, c_in, 3, 3], gk)?,
                        Tensor::from_vec(&[c_out], gb)?,
                    ])
                } else {
                    None
                };
                let dx = want_input.then(|| layers::conv_input_grad(p[0].data(), &gz, batch, c_in, c_out, h, w));
                Ok((params, dx))
            }
        }
    }

    /// Forward pass that keeps caches for blocks `act.depth..=L`.
    fn forward_cached(&self, act: &Activation) -> Result<(Vec<f64>, Vec<BlockCache>)> {
        let mut caches = Vec::with_capacity(self.n_blocks() + 1 - act.depth);
        let mut cur = act.data.clone();
        for idx in act.depth..=self.n_blocks() {
            let (y, c) = self.block_forward(idx, &cur, act.batch, true);
            caches.push(c.expect("cache requested"));
            cur = y;
        }
        if cur.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("logits".into()));
        }
        Ok((cur, caches))
    }

    /// ReLU on/off pattern and max-pool winners for a batch. Two parameter
    /// settings with equal signatures lie in the same smooth piece of the
    /// loss, which is what finite-difference checks need to know.
    pub fn kink_signature(&self, x: &Tensor) -> Result<Vec<u32>> {
        let act = self.activation_at(x, 0)?;
        let (_, caches) = self.forward_cached(&act)?;
        let mut sig = Vec::new();
        for c in &caches {
            sig.extend(c.mask.iter().map(|&m| m as u32));
            sig.extend_from_slice(&c.argmax);
        }
        Ok(sig)
    }

    /// Mean cross-entropy of the batch.
    pub fn loss(&self, x: &Tensor, y: &[usize]) -> Result<f64> {
        let act = self.activation_at(x, 0)?;
        self.loss_from(&act, y)
    }

    pub fn loss_from(&self, act: &Activation, y: &[usize]) -> Result<f64> {
        self.check_labels(act.batch, y)?;
        let logits = self.forward_from(act)?;
        Ok(softmax_xent(&logits, y, self.n_classes).0)
    }

    fn check_labels(&self, batch: usize, y: &[usize]) -> Result<()> {
        if batch == 0 {
            return Err(Error::input("empty batch"));
        }
        if y.len() != batch {
            return Err(Error::input(format!("{} labels for batch of {batch}", y.len())));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= self.n_classes) {
            return Err(Error::input(format!("label {bad} out of range")));
        }
        Ok(())
    }

    /// Mean cross-entropy and its gradient restricted to `scope`.
    ///
    /// Every scoped block must currently be trainable.
    pub fn loss_and_grad(&self, x: &Tensor, y: &[usize], scope: &Scope) -> Result<(f64, Gradients)> {
        for i in 0..=self.n_blocks() {
            if scope.contains(i) && !self.block_at(i).trainable {
                return Err(Error::contract(format!(
                    "gradient requested for frozen block {}",
                    self.block_at(i).id
                )));
            }
        }
        self.loss_and_grad_any(x, y, scope)
    }

    /// Like [`Model::loss_and_grad`] but ignores trainable flags; used by
    /// read-only diagnostics such as per-block gradient similarity.
    pub fn loss_and_grad_any(&self, x: &Tensor, y: &[usize], scope: &Scope) -> Result<(f64, Gradients)> {
        self.check_input(x)?;
        let start = scope.lowest().unwrap_or(self.n_blocks());
        let act = self.activation_at(x, start)?;
        self.loss_and_grad_from(&act, y, scope)
    }

    /// Gradient from a cached activation; `scope` must not reach below it.
    pub fn loss_and_grad_from(&self, act: &Activation, y: &[usize], scope: &Scope) -> Result<(f64, Gradients)> {
        self.check_labels(act.batch, y)?;
        if let Some(low) = scope.lowest() {
            if low < act.depth {
                return Err(Error::contract("scope reaches below cached activation"));
            }
        }
        let (logits, caches) = self.forward_cached(act)?;
        let (loss, dlogits) = softmax_xent(&logits, y, self.n_classes);
        let grads = self.backward(act, &caches, dlogits, scope)?;
        Ok((loss, grads))
    }

    fn backward(&self, act: &Activation, caches: &[BlockCache], dlogits: Vec<f64>, scope: &Scope) -> Result<Gradients> {
        let mut grads = Gradients::new();
        let Some(low) = scope.lowest() else {
            return Ok(grads);
        };
        let mut g = dlogits;
        for idx in (low..=self.n_blocks()).rev() {
            let cache = &caches[idx - act.depth];
            let (params, dx) = self.block_backward(idx, cache, &g, act.batch, scope.contains(idx), idx > low)?;
            if let Some(p) = params {
                grads.insert(self.block_at(idx).id.clone(), p);
            }
            if let Some(dx) = dx {
                g = dx;
            }
        }
        Ok(grads)
    }

    /// Class probabilities and `||grad_scope log p(c|x_n)||^2` for every
    /// example and class, without materializing per-example gradients for
    /// dense blocks (outer-product norm factorization).
    pub fn class_score_sq_norms(&self, x: &Tensor, scope: &Scope) -> Result<ScoreNorms> {
        let batch = self.check_input(x)?;
        if batch == 0 {
            return Err(Error::input("empty batch"));
        }
        let c = self.n_classes;
        let Some(low) = scope.lowest() else {
            return Err(Error::input("empty scope"));
        };
        let act = self.activation_at(x, low)?;
        let (logits, caches) = self.forward_cached(&act)?;
        let probs = softmax_rows(&logits, c);
        // ||x_n||^2 per cached dense input, reused for every class
        let in_norms: Vec<Vec<f64>> = (low..=self.n_blocks())
            .map(|idx| {
                let cache = &caches[idx - low];
                let w = self.ops[idx].in_size();
                (0..batch)
                    .map(|n| cache.input[n * w..(n + 1) * w].iter().map(|v| v * v).sum())
                    .collect()
            })
            .collect();
        let mut sq = vec![0.0; batch * c];
        let mut norms = vec![0.0; batch];
        for class in 0..c {
            // d log p(class|x) / d logits = e_class - p
            let mut g: Vec<f64> = probs
                .iter()
                .enumerate()
                .map(|(i, &p)| if i % c == class { 1.0 - p } else { -p })
                .collect();
            norms.iter_mut().for_each(|v| *v = 0.0);
            for idx in (low..=self.n_blocks()).rev() {
                let cache = &caches[idx - low];
                let gz = self.pre_activation_grad(idx, cache, &g, batch);
                if scope.contains(idx) {
                    match self.ops[idx] {
                        BlockOp::DenseRelu { out, .. } | BlockOp::Linear { out, .. } => {
                            for n in 0..batch {
                                let gn: f64 = gz[n * out..(n + 1) * out].iter().map(|v| v * v).sum();
                                norms[n] += gn * in_norms[idx - low][n] + gn;
                            }
                        }
                        BlockOp::ConvStage { c_in, c_out, h, w } => {
                            let mut gk = vec![0.0; c_out * c_in * 9];
                            let mut gb = vec![0.0; c_out];
                            for n in 0..batch {
                                gk.iter_mut().for_each(|v| *v = 0.0);
                                gb.iter_mut().for_each(|v| *v = 0.0);
                                layers::conv_param_grad_single(&cache.input, &gz, n, c_in, c_out, h, w, &mut gk, &mut gb);
                                norms[n] += gk.iter().map(|v| v * v).sum::<f64>() + gb.iter().map(|v| v * v).sum::<f64>();
                            }
                        }
                    }
                }
                if idx > low {
                    let p = &self.block_at(idx).params;
                    g = match self.ops[idx] {
                        BlockOp::DenseRelu { inp, out } | BlockOp::Linear { inp, out } => {
                            layers::dense_backward(&cache.input, p[0].data(), &gz, batch, inp, out, false, true)
                                .1
                                .expect("input grad")
                        }
                        BlockOp::ConvStage { c_in, c_out, h, w } => {
                            layers::conv_input_grad(p[0].data(), &gz, batch, c_in, c_out, h, w)
                        }
                    };
                }
            }
            for n in 0..batch {
                sq[n * c + class] = norms[n];
            }
        }
        Ok(ScoreNorms {
            probs,
            sq_norms: sq,
            n_classes: c,
        })
    }
}

/// Row-wise softmax of `[batch, c]` logits.
pub fn softmax_rows(logits: &[f64], c: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(c) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / s));
    }
    out
}

/// Mean cross-entropy and `d loss / d logits`.
fn softmax_xent(logits: &[f64], y: &[usize], c: usize) -> (f64, Vec<f64>) {
    let batch = y.len();
    let mut grad = Vec::with_capacity(logits.len());
    let mut loss = 0.0;
    for (row, &label) in logits.chunks(c).zip(y) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let lse = m + s.ln();
        loss += lse - row[label];
        for (j, v) in row.iter().enumerate() {
            let p = (v - lse).exp();
            let t = if j == label { 1.0 } else { 0.0 };
            grad.push((p - t) / batch as f64);
        }
    }
    (loss / batch as f64, grad)
}

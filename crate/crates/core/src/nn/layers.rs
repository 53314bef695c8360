//! Batched kernels for the three block kinds.
//!
//! Every reduction over the batch runs sequentially in batch-index order, so
//! results are bit-reproducible regardless of caller.

/// Shape and kind of one parameter block's computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BlockOp {
    /// `relu(x W + b)`, `W: [inp, out]`.
    DenseRelu { inp: usize, out: usize },
    /// `maxpool2x2(relu(conv3x3(x) + b))`, same-padding, `K: [c_out, c_in, 3, 3]`.
    ConvStage {
        c_in: usize,
        c_out: usize,
        h: usize,
        w: usize,
    },
    /// `x W + b` without activation (classification head).
    Linear { inp: usize, out: usize },
}

impl BlockOp {
    pub fn in_size(&self) -> usize {
        match *self {
            BlockOp::DenseRelu { inp, .. } | BlockOp::Linear { inp, .. } => inp,
            BlockOp::ConvStage { c_in, h, w, .. } => c_in * h * w,
        }
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            BlockOp::DenseRelu { inp, out } | BlockOp::Linear { inp, out } => {
                vec![vec![inp, out], vec![out]]
            }
            BlockOp::ConvStage { c_in, c_out, .. } => vec![vec![c_out, c_in, 3, 3], vec![c_out]],
        }
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            BlockOp::DenseRelu { inp, .. } | BlockOp::Linear { inp, .. } => inp,
            BlockOp::ConvStage { c_in, .. } => c_in * 9,
        }
    }
}

/// What a block keeps from its forward pass for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct BlockCache {
    pub input: Vec<f64>,
    /// Positive pre-activation mask (dense and conv blocks).
    pub mask: Vec<bool>,
    /// Flat index into the relu output chosen by each pooled cell.
    pub argmax: Vec<u32>,
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four fixed lanes, combined in a fixed order.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `y[n] = b + x[n] W` for a `[inp, out]` weight.
pub(crate) fn dense_forward(x: &[f64], w: &[f64], b: &[f64], batch: usize, inp: usize, out: usize) -> Vec<f64> {
    let mut y = vec![0.0; batch * out];
    for n in 0..batch {
        let yr = &mut y[n * out..(n + 1) * out];
        yr.copy_from_slice(b);
        let xr = &x[n * inp..(n + 1) * inp];
        for (i, &xi) in xr.iter().enumerate() {
            if xi != 0.0 {
                axpy(yr, xi, &w[i * out..(i + 1) * out]);
            }
        }
    }
    y
}

/// Returns `(dW, db)` and, if requested, `dx`.
pub(crate) fn dense_backward(
    x: &[f64],
    w: &[f64],
    g: &[f64],
    batch: usize,
    inp: usize,
    out: usize,
    want_params: bool,
    want_input: bool,
) -> (Option<(Vec<f64>, Vec<f64>)>, Option<Vec<f64>>) {
    let params = want_params.then(|| {
        let mut gw = vec![0.0; inp * out];
        let mut gb = vec![0.0; out];
        for n in 0..batch {
            let gr = &g[n * out..(n + 1) * out];
            for (bo, &go) in gb.iter_mut().zip(gr) {
                *bo += go;
            }
            let xr = &x[n * inp..(n + 1) * inp];
            for (i, &xi) in xr.iter().enumerate() {
                if xi != 0.0 {
                    axpy(&mut gw[i * out..(i + 1) * out], xi, gr);
                }
            }
        }
        (gw, gb)
    });
    let dx = want_input.then(|| {
        let mut dx = vec![0.0; batch * inp];
        for n in 0..batch {
            let gr = &g[n * out..(n + 1) * out];
            for i in 0..inp {
                dx[n * inp + i] = dot(&w[i * out..(i + 1) * out], gr);
            }
        }
        dx
    });
    (params, dx)
}

/// 3x3 same-padded convolution, `x: [batch, c_in, h, w]`.
pub(crate) fn conv_forward(
    x: &[f64],
    k: &[f64],
    b: &[f64],
    batch: usize,
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
) -> Vec<f64> {
    let plane = h * w;
    let mut y = vec![0.0; batch * c_out * plane];
    for n in 0..batch {
        for co in 0..c_out {
            let yp = &mut y[(n * c_out + co) * plane..(n * c_out + co + 1) * plane];
            yp.iter_mut().for_each(|v| *v = b[co]);
            for ci in 0..c_in {
                let xp = &x[(n * c_in + ci) * plane..(n * c_in + ci + 1) * plane];
                let kk = &k[(co * c_in + ci) * 9..(co * c_in + ci + 1) * 9];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let kv = kk[ky * 3 + kx];
                        for yy in 0..h {
                            let sy = yy as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let srow = &xp[sy as usize * w..(sy as usize + 1) * w];
                            let drow = &mut yp[yy * w..(yy + 1) * w];
                            let (x0, x1) = col_range(kx, w);
                            for xx in x0..x1 {
                                drow[xx] += kv * srow[xx + kx - 1];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Output columns `xx` for which `xx + kx - 1` is in bounds.
#[inline]
fn col_range(kx: usize, w: usize) -> (usize, usize) {
    match kx {
        0 => (1, w),
        1 => (0, w),
        _ => (0, w.saturating_sub(1)),
    }
}

/// Kernel and bias gradient contributed by example `n` alone.
pub(crate) fn conv_param_grad_single(
    x: &[f64],
    g: &[f64],
    n: usize,
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    gk: &mut [f64],
    gb: &mut [f64],
) {
    let plane = h * w;
    for co in 0..c_out {
        let gp = &g[(n * c_out + co) * plane..(n * c_out + co + 1) * plane];
        gb[co] += gp.iter().sum::<f64>();
        for ci in 0..c_in {
            let xp = &x[(n * c_in + ci) * plane..(n * c_in + ci + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let mut s = 0.0;
                    for yy in 0..h {
                        let sy = yy as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let srow = &xp[sy as usize * w..(sy as usize + 1) * w];
                        let grow = &gp[yy * w..(yy + 1) * w];
                        let (x0, x1) = col_range(kx, w);
                        for xx in x0..x1 {
                            s += grow[xx] * srow[xx + kx - 1];
                        }
                    }
                    gk[(co * c_in + ci) * 9 + ky * 3 + kx] += s;
                }
            }
        }
    }
}

pub(crate) fn conv_input_grad(
    k: &[f64],
    g: &[f64],
    batch: usize,
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
) -> Vec<f64> {
    let plane = h * w;
    let mut dx = vec![0.0; batch * c_in * plane];
    for n in 0..batch {
        for ci in 0..c_in {
            let dp = &mut dx[(n * c_in + ci) * plane..(n * c_in + ci + 1) * plane];
            for co in 0..c_out {
                let gp = &g[(n * c_out + co) * plane..(n * c_out + co + 1) * plane];
                let kk = &k[(co * c_in + ci) * 9..(co * c_in + ci + 1) * 9];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let kv = kk[ky * 3 + kx];
                        for yy in 0..h {
                            let sy = yy as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let grow = &gp[yy * w..(yy + 1) * w];
                            let drow = &mut dp[sy as usize * w..(sy as usize + 1) * w];
                            let (x0, x1) = col_range(kx, w);
                            for xx in x0..x1 {
                                drow[xx + kx - 1] += kv * grow[xx];
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// 2x2 stride-2 max pooling with floor semantics; returns values and argmax.
pub(crate) fn maxpool_forward(x: &[f64], batch: usize, c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Vec::with_capacity(batch * c * oh * ow);
    let mut arg = Vec::with_capacity(batch * c * oh * ow);
    for nc in 0..batch * c {
        let base = nc * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + (2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                y.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (y, arg)
}

pub(crate) fn maxpool_backward(g: &[f64], argmax: &[u32], in_len: usize) -> Vec<f64> {
    let mut dx = vec![0.0; in_len];
    for (&gi, &a) in g.iter().zip(argmax) {
        dx[a as usize] += gi;
    }
    dx
}

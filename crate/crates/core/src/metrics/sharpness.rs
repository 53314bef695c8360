//! Average and worst-case adaptive sharpness.
//!
//! Perturbations are measured in the scaled coordinates `u = delta / c`, so
//! the constraint set is the L2 ball `||u|| <= rho`.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::objective::Objective;
use crate::rng::{PrngStreams, Stream};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CMode {
    Ones,
    #[default]
    AbsW,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    #[default]
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PgdConfig {
    pub steps: usize,
    /// Step length as a fraction of `rho`.
    pub step_frac: f64,
    /// Random restarts in addition to the run started at `u = 0`.
    pub restarts: usize,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            steps: 40,
            step_frac: 2.0,
            restarts: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SharpnessConfig {
    pub rho: f64,
    pub n_noise: usize,
    pub c_mode: CMode,
    pub c_floor: f64,
    pub norm: Norm,
    pub pgd: PgdConfig,
}

impl Default for SharpnessConfig {
    fn default() -> Self {
        Self {
            rho: 0.01,
            n_noise: 15,
            c_mode: CMode::AbsW,
            c_floor: 1e-12,
            norm: Norm::L2,
            pgd: PgdConfig::default(),
        }
    }
}

impl SharpnessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::input(format!("rho must be positive, got {}", self.rho)));
        }
        if self.n_noise == 0 {
            return Err(Error::input("n_noise must be at least 1"));
        }
        if !(self.c_floor > 0.0) {
            return Err(Error::input("c_floor must be positive"));
        }
        if self.pgd.steps == 0 || !(self.pgd.step_frac > 0.0 && self.pgd.step_frac.is_finite()) {
            return Err(Error::input("pgd needs steps >= 1 and a positive step_frac"));
        }
        Ok(())
    }
}

/// Per-coordinate scale of the perturbation.
pub fn c_vector(w: &[f64], mode: CMode, floor: f64) -> Vec<f64> {
    match mode {
        CMode::Ones => vec![1.0; w.len()],
        CMode::AbsW => w.iter().map(|v| v.abs().max(floor)).collect(),
    }
}

/// Noise streams for one measurement; draw `i` is a pure function of
/// `(master seed, call, i)`.
fn call_streams(streams: &PrngStreams, call: u64) -> PrngStreams {
    PrngStreams::new(streams.derive_seed(Stream::Noise, call))
}

const RESTART_BASE: u64 = 1 << 40;

/// The `n_noise` perturbations `delta ~ N(0, rho^2 diag(c^2))` used by
/// [`sharpness_avg`].
pub fn avg_draw_deltas(c: &[f64], cfg: &SharpnessConfig, streams: &PrngStreams, call: u64) -> Vec<Vec<f64>> {
    let s = call_streams(streams, call);
    (0..cfg.n_noise as u64)
        .map(|i| {
            let mut rng = s.substream(Stream::Noise, i);
            c.iter()
                .map(|&ci| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    cfg.rho * ci * z
                })
                .collect()
        })
        .collect()
}

/// `L(w - delta) - L(w)` for each perturbation.
pub fn perturbed_increases<O: Objective>(obj: &O, deltas: &[Vec<f64>]) -> Result<Vec<f64>> {
    let w = obj.base();
    let l0 = obj.loss_at(w)?;
    let mut out = Vec::with_capacity(deltas.len());
    let mut buf = vec![0.0; w.len()];
    for d in deltas {
        for i in 0..w.len() {
            buf[i] = w[i] - d[i];
        }
        let l = obj.loss_at(&buf)?;
        if !l.is_finite() {
            return Err(Error::NonFinite("perturbed loss".into()));
        }
        out.push(l - l0);
    }
    Ok(out)
}

/// Mean loss increase under Gaussian perturbations.
pub fn sharpness_avg<O: Objective>(obj: &O, cfg: &SharpnessConfig, streams: &PrngStreams, call: u64) -> Result<f64> {
    cfg.validate()?;
    let c = c_vector(obj.base(), cfg.c_mode, cfg.c_floor);
    let inc = perturbed_increases(obj, &avg_draw_deltas(&c, cfg, streams, call))?;
    Ok(inc.iter().sum::<f64>() / inc.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorstCase {
    pub value: f64,
    /// Maximizing perturbation in parameter units.
    pub delta: Vec<f64>,
    pub evaluations: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn project(u: &mut [f64], rho: f64) {
    let un = norm(u);
    if un > rho {
        u.iter_mut().for_each(|v| *v *= rho / un);
    }
}

fn random_direction(n: usize, rng: &mut impl rand::Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let nv = norm(&v);
        if nv > 0.0 {
            return v.into_iter().map(|x| x / nv).collect();
        }
    }
}

/// Largest loss increase over `||delta / c|| <= rho`, estimated by projected
/// normalized-gradient ascent: one run from `delta = 0` plus random restarts
/// on the sphere, keeping the best point evaluated (which includes
/// `delta = 0`, so the result is never negative).
pub fn sharpness_worst<O: Objective>(
    obj: &O,
    cfg: &SharpnessConfig,
    streams: &PrngStreams,
    call: u64,
) -> Result<WorstCase> {
    cfg.validate()?;
    let w = obj.base();
    let n = w.len();
    let rho = cfg.rho;
    let alpha = cfg.pgd.step_frac * rho;
    let c = c_vector(w, cfg.c_mode, cfg.c_floor);
    let l0 = obj.loss_at(w)?;
    if !l0.is_finite() {
        return Err(Error::NonFinite("base loss".into()));
    }
    let s = call_streams(streams, call);
    let mut best = WorstCase {
        value: 0.0,
        delta: vec![0.0; n],
        evaluations: 1,
    };
    let mut point = vec![0.0; n];
    for run in 0..=cfg.pgd.restarts {
        let mut rng = s.substream(Stream::Noise, RESTART_BASE + run as u64);
        let mut u = if run == 0 {
            vec![0.0; n]
        } else {
            random_direction(n, &mut rng).into_iter().map(|x| x * rho).collect()
        };
        for it in 0..=cfg.pgd.steps {
            for i in 0..n {
                point[i] = w[i] - c[i] * u[i];
            }
            let last = it == cfg.pgd.steps;
            let (l, g) = if last {
                (obj.loss_at(&point)?, Vec::new())
            } else {
                obj.loss_grad_at(&point)?
            };
            best.evaluations += 1;
            if !l.is_finite() {
                return Err(Error::NonFinite("loss during worst-case search".into()));
            }
            if l - l0 > best.value {
                best.value = l - l0;
                best.delta = (0..n).map(|i| c[i] * u[i]).collect();
            }
            if last {
                break;
            }
            // d/du L(w - c u) = -c * grad L
            let mut gu: Vec<f64> = (0..n).map(|i| -c[i] * g[i]).collect();
            let mut gn = norm(&gu);
            if !gn.is_finite() {
                return Err(Error::NonFinite("gradient during worst-case search".into()));
            }
            if gn < 1e-300 {
                if u.iter().any(|&v| v != 0.0) {
                    break;
                }
                gu = random_direction(n, &mut rng);
                gn = 1.0;
            }
            for i in 0..n {
                u[i] += alpha * gu[i] / gn;
            }
            project(&mut u, rho);
        }
    }
    Ok(best)
}

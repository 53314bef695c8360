use eseize_core::metrics::{
    avg_draw_deltas, c_vector, feature_rank, matrix_rank, mean_cosine, perturbed_increases, sharpness_avg,
    sharpness_worst, trace_fisher, CMode, DiagQuadratic, FisherMode, ModelObjective, Objective, SharpnessConfig,
    DEFAULT_RANK_TOL,
};
use eseize_core::nn::{Arch, Model, Scope};
use eseize_core::rng::{rng_from_seed, PrngStreams};
use eseize_core::Tensor;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn random_x(n: usize, d: usize, seed: u64) -> Tensor {
    let mut rng = rng_from_seed(seed);
    Tensor::from_vec(&[n, d], (0..n * d).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

/// Trace of `(1/N) sum_n sum_c p(c|x_n) g g^T` with every score vector
/// obtained from an ordinary single-example backward pass.
fn brute_force_fisher_trace(model: &Model, x: &Tensor, scope: &Scope) -> f64 {
    let n = x.rows();
    let c = model.n_classes();
    let p = scope.n_params(model);
    let mut f = DMatrix::<f64>::zeros(p, p);
    for i in 0..n {
        let xi = x.select_rows(&[i]);
        let logits = model.forward(&xi).unwrap();
        let probs = eseize_core::nn::softmax_rows(logits.data(), c);
        for class in 0..c {
            // loss = -log p(class|x), so its gradient is minus the score
            let (_, g) = model.loss_and_grad_any(&xi, &[class], scope).unwrap();
            let s = DMatrix::from_column_slice(p, 1, &g.flatten(model));
            f += (&s * s.transpose()) * (probs[class] / n as f64);
        }
    }
    f.trace() / p as f64
}

fn fisher_models() -> Vec<(Model, Tensor)> {
    let mut out = Vec::new();
    for seed in 0..24u64 {
        let mut rng = rng_from_seed(500 + seed);
        let arch = if seed % 3 == 2 {
            Arch::SmallConv {
                side: 8,
                c1: 1,
                c2: 1,
                dense: 3,
            }
        } else {
            Arch::Mlp {
                input_dim: rng.random_range(2..5),
                hidden: rng.random_range(2..5),
                depth: rng.random_range(1..3),
            }
        };
        let classes = rng.random_range(2..5);
        let m = Model::new(arch, classes, &PrngStreams::new(seed)).unwrap();
        assert!(m.n_params() <= 64, "{arch:?} has {}", m.n_params());
        let x = random_x(rng.random_range(4..17), arch.input_dim(), seed);
        out.push((m, x));
    }
    out
}

#[test]
fn exact_fisher_matches_brute_force_matrix() {
    for (i, (m, x)) in fisher_models().into_iter().enumerate() {
        for scope in [Scope::all(&m), Scope::head_only(&m)] {
            let fast = trace_fisher(&m, &x, &scope, FisherMode::Exact, &PrngStreams::new(0), 0).unwrap();
            let slow = brute_force_fisher_trace(&m, &x, &scope);
            assert!(fast >= 0.0);
            assert!((fast - slow).abs() <= 1e-10 * slow.abs().max(1e-300), "model {i}: {fast} vs {slow}");
        }
    }
}

/// Log-uniform spectrum in `[1, cond]` that always contains both ends.
fn spectrum(n: usize, cond: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    let mut l: Vec<f64> = (0..n).map(|_| cond.powf(rng.random_range(0.0..1.0))).collect();
    l[0] = 1.0;
    if n > 1 {
        l[n - 1] = cond;
    }
    l
}

/// max over ||u|| <= rho of 1/2 sum l_i (w_i - u_i)^2 - 1/2 sum l_i w_i^2,
/// via the secular equation ||u(mu)|| = rho with u_i = -l_i w_i / (mu - l_i), mu > l_max.
fn quadratic_worst_oracle(l: &[f64], w: &[f64], rho: f64) -> f64 {
    let lmax = l.iter().copied().fold(0.0, f64::max);
    let unorm = |mu: f64| -> f64 {
        l.iter()
            .zip(w)
            .map(|(&li, &wi)| (li * wi / (mu - li)).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let (mut lo, mut hi) = (lmax, lmax + 1.0);
    while unorm(hi) > rho {
        hi = lmax + 2.0 * (hi - lmax);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if unorm(mid) > rho {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mu = 0.5 * (lo + hi);
    let mut val = 0.0;
    for i in 0..l.len() {
        let u = -l[i] * w[i] / (mu - l[i]);
        val += 0.5 * l[i] * ((w[i] - u).powi(2) - w[i].powi(2));
    }
    val
}

fn ones_cfg() -> SharpnessConfig {
    SharpnessConfig {
        c_mode: CMode::Ones,
        ..SharpnessConfig::default()
    }
}

#[test]
fn worst_case_on_quadratic_minima() {
    let cfg = ones_cfg();
    let mut worst_ratio = f64::INFINITY;
    for seed in 0..108u64 {
        let n = [1, 2, 5, 20, 60, 200][seed as usize % 6];
        let cond = [1.0, 10.0, 100.0][(seed as usize / 6) % 3];
        let q = DiagQuadratic::at_minimum(spectrum(n, cond, seed));
        let lmax = q.lambda.iter().copied().fold(0.0, f64::max);
        let exact = 0.5 * cfg.rho * cfg.rho * lmax;
        let s = sharpness_worst(&q, &cfg, &PrngStreams::new(seed), 0).unwrap();
        worst_ratio = worst_ratio.min(s.value / exact);
        assert!(s.value <= exact * (1.0 + 1e-9));
        assert!((s.value - exact).abs() <= 0.05 * exact, "seed {seed} n {n} cond {cond}: {} vs {exact}", s.value);
    }
    eprintln!("worst-case/exact at minima, min ratio {worst_ratio:.4}");
}

#[test]
fn worst_case_on_quadratic_non_minima() {
    let cfg = ones_cfg();
    let mut worst_ratio = f64::INFINITY;
    for seed in 0..108u64 {
        let n = [1, 2, 5, 20, 60, 200][seed as usize % 6];
        let cond = [1.0, 10.0, 100.0][(seed as usize / 6) % 3];
        let mut q = DiagQuadratic::at_minimum(spectrum(n, cond, seed));
        let mut rng = rng_from_seed(seed + 77);
        let scale = [1e-3, 1e-2, 1.0][(seed as usize / 18) % 3];
        q.base = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect();
        let exact = quadratic_worst_oracle(&q.lambda, &q.base, cfg.rho);
        let s = sharpness_worst(&q, &cfg, &PrngStreams::new(seed), 0).unwrap();
        worst_ratio = worst_ratio.min(s.value / exact);
        assert!(s.value <= exact * (1.0 + 1e-9));
        assert!((s.value - exact).abs() <= 0.05 * exact, "seed {seed} n {n}: {} vs {exact}", s.value);
    }
    eprintln!("worst-case/exact away from minima, min ratio {worst_ratio:.4}");
}

#[test]
fn average_converges_to_half_rho_squared_trace() {
    let cfg = SharpnessConfig {
        n_noise: 100_000,
        ..ones_cfg()
    };
    for seed in 0..3u64 {
        let q = DiagQuadratic::at_minimum(spectrum(4, 100.0, seed));
        let tr: f64 = q.lambda.iter().sum();
        let exact = 0.5 * cfg.rho * cfg.rho * tr;
        let sd = 0.5 * cfg.rho * cfg.rho * (2.0 * q.lambda.iter().map(|l| l * l).sum::<f64>()).sqrt()
            / (cfg.n_noise as f64).sqrt();
        let s = sharpness_avg(&q, &cfg, &PrngStreams::new(seed), 0).unwrap();
        assert!((s - exact).abs() <= 3.0 * sd, "{s} vs {exact} (sd {sd})");
        assert!((s - exact).abs() <= 0.03 * exact);
    }
}

#[test]
fn worst_dominates_projected_average_draws_on_a_network() {
    let arch = Arch::Mlp {
        input_dim: 6,
        hidden: 8,
        depth: 2,
    };
    let streams = PrngStreams::new(4);
    let m = Model::new(arch, 3, &streams).unwrap();
    let x = random_x(64, 6, 9);
    let y: Vec<usize> = (0..64).map(|i| i % 3).collect();
    let obj = ModelObjective::trainable(&m, &x, &y).unwrap();
    for cfg in [ones_cfg(), SharpnessConfig::default()] {
        let c = c_vector(obj.base(), cfg.c_mode, cfg.c_floor);
        let mut deltas = avg_draw_deltas(&c, &cfg, &streams, 3);
        for d in deltas.iter_mut() {
            let un = d.iter().zip(&c).map(|(a, b)| (a / b).powi(2)).sum::<f64>().sqrt();
            if un > cfg.rho {
                d.iter_mut().for_each(|v| *v *= cfg.rho / un);
            }
        }
        let best_draw = perturbed_increases(&obj, &deltas).unwrap().into_iter().fold(f64::MIN, f64::max);
        let worst = sharpness_worst(&obj, &cfg, &streams, 3).unwrap();
        assert!(worst.value >= best_draw, "{} < {best_draw}", worst.value);
    }
}

#[test]
fn gaussian_features_have_full_rank() {
    let mut rng = rng_from_seed(12);
    let data: Vec<f64> = (0..2048 * 64).map(|_| StandardNormal.sample(&mut rng)).collect();
    let t = Tensor::from_vec(&[2048, 64], data.clone()).unwrap();
    let svd = DMatrix::from_row_slice(2048, 64, &data).svd(false, false);
    let smax = svd.singular_values.max();
    let oracle = svd.singular_values.iter().filter(|&&s| s > DEFAULT_RANK_TOL * smax).count();
    assert_eq!(oracle, 64);
    assert_eq!(matrix_rank(&t, DEFAULT_RANK_TOL), oracle);
}

#[test]
fn feature_rank_of_narrow_network_is_bounded_by_width() {
    let arch = Arch::Mlp {
        input_dim: 10,
        hidden: 6,
        depth: 2,
    };
    let m = Model::new(arch, 3, &PrngStreams::new(1)).unwrap();
    let r = feature_rank(&m, &random_x(50, 10, 2), DEFAULT_RANK_TOL).unwrap();
    assert!(r <= 6 && r > 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cosine_similarity_ignores_positive_rescaling(
        seed in 0u64..10_000,
        scales in proptest::collection::vec(1e-3f64..1e3, 4),
    ) {
        let mut rng = rng_from_seed(seed);
        let grads: Vec<Vec<f64>> = (0..3).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let full: Vec<f64> = (0..5).map(|j| grads.iter().map(|g| g[j]).sum::<f64>() / 3.0).collect();
        let base = mean_cosine(&grads, &full).unwrap();
        let scaled: Vec<Vec<f64>> = grads.iter().zip(&scales).map(|(g, s)| g.iter().map(|v| v * s).collect()).collect();
        let full_scaled: Vec<f64> = full.iter().map(|v| v * scales[3]).collect();
        let again = mean_cosine(&scaled, &full_scaled).unwrap();
        prop_assert!((base - again).abs() < 1e-12);
        prop_assert!(base.abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn rank_ignores_row_order(seed in 0u64..10_000, n in 2usize..30, d in 1usize..8) {
        let x = random_x(n, d, seed);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = rng_from_seed(seed ^ 0xabc);
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        prop_assert_eq!(matrix_rank(&x, DEFAULT_RANK_TOL), matrix_rank(&x.select_rows(&perm), DEFAULT_RANK_TOL));
    }

    #[test]
    fn fisher_trace_is_nonnegative(seed in 0u64..10_000) {
        let arch = Arch::Mlp { input_dim: 3, hidden: 4, depth: 2 };
        let m = Model::new(arch, 3, &PrngStreams::new(seed)).unwrap();
        let x = random_x(5, 3, seed);
        for scope in [Scope::all(&m), Scope::head_only(&m)] {
            let t = trace_fisher(&m, &x, &scope, FisherMode::Exact, &PrngStreams::new(0), 0).unwrap();
            prop_assert!(t >= 0.0);
        }
    }
}

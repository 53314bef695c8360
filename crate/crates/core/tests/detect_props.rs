use eseize_core::detect::{detect, find_stabilization_by_mean, normalize, DetectorConfig, RiseMode, Trace};
use eseize_core::rng::rng_from_seed;
use proptest::prelude::*;
use rand::Rng;

/// Rise from 0 to 1 over `rise` records, then a noisy plateau; returns the
/// values and the index where the plateau starts.
fn rise_plateau(seed: u64, noise: f64) -> (Vec<f64>, usize) {
    let mut rng = rng_from_seed(seed);
    let lead = rng.random_range(0..4usize);
    let rise = rng.random_range(4..30usize);
    let tail = rng.random_range(20..60usize);
    let smooth = rng.random_bool(0.5);
    let mut v = Vec::new();
    for _ in 0..lead {
        v.push(rng.random_range(-noise..=noise));
    }
    for i in 1..=rise {
        let t = i as f64 / rise as f64;
        v.push(if smooth { t * t * (3.0 - 2.0 * t) } else { t });
    }
    let start = v.len();
    for _ in 0..tail {
        v.push(1.0 + rng.random_range(-noise..=noise));
    }
    (v, start)
}

#[test]
fn plateau_start_recovered_on_synthetic_traces() {
    let cfg = DetectorConfig::default();
    let mut worst = 0i64;
    for seed in 0..100u64 {
        let (v, start) = rise_plateau(seed, 0.005);
        let r = detect(&Trace::strided(10, v).unwrap(), "trf", &cfg, 10).unwrap();
        let off = r.t_stab as i64 - start as i64;
        worst = worst.max(off.abs());
        assert!(off.abs() <= 2 * cfg.tau as i64, "seed {seed}: t_stab {} vs plateau {start}", r.t_stab);
        assert_eq!(r.k_hat, 10 * r.t_stab as u64);
    }
    eprintln!("largest |t_stab - plateau start| = {worst}");
}

fn trace_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 12..60)
}

proptest! {
    #[test]
    fn smaller_eps_never_stabilizes_earlier(v in trace_strategy(), t_rise in 0usize..4, a in 0.001f64..0.5, b in 0.001f64..0.5) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let norm = match normalize(&v) { Ok(n) => n, Err(_) => return Ok(()) };
        let tight = DetectorConfig { eps: lo, ..DetectorConfig::default() };
        let loose = DetectorConfig { eps: hi, ..DetectorConfig::default() };
        if let Ok(t) = find_stabilization_by_mean(&norm, t_rise, &tight) {
            let l = find_stabilization_by_mean(&norm, t_rise, &loose).unwrap();
            prop_assert!(t >= l);
        }
    }

    #[test]
    fn affine_rescaling_leaves_detection_unchanged(seed in 0u64..1000, scale in prop::sample::select(vec![0.25, 2.0, 8.0, 1024.0]), shift in -4i32..4) {
        let (v, _) = rise_plateau(seed, 0.005);
        let cfg = DetectorConfig::default();
        let w: Vec<f64> = v.iter().map(|x| x * scale + shift as f64).collect();
        let a = detect(&Trace::strided(10, v).unwrap(), "m", &cfg, 10).unwrap();
        let b = detect(&Trace::strided(10, w).unwrap(), "m", &cfg, 10).unwrap();
        prop_assert_eq!(a, b);
    }

    // Spikes are kept below the steepest rise (slope >= 1/30 per record),
    // otherwise the spike itself is the rapid change.
    #[test]
    fn single_plateau_spike_moves_t_stab_by_at_most_tau(seed in 0u64..1000, m in 0.0f64..0.09, pos in 0usize..15, tau in prop::sample::select(vec![3usize, 8])) {
        let (v, start) = rise_plateau(seed, 0.005);
        let cfg = DetectorConfig { tau, ..DetectorConfig::default() };
        let base = detect(&Trace::strided(10, v.clone()).unwrap(), "m", &cfg, 10);
        let Ok(base) = base else { return Ok(()) };
        let mut spiked = v.clone();
        let at = (start + pos).min(v.len() - 1);
        spiked[at] -= m;
        let r = detect(&Trace::strided(10, spiked).unwrap(), "m", &cfg, 10).unwrap();
        prop_assert!((r.t_stab as i64 - base.t_stab as i64).abs() <= tau as i64, "{} vs {}", r.t_stab, base.t_stab);
    }

    #[test]
    fn khat_is_a_positive_multiple_of_the_stride(seed in 0u64..1000, stride in 1u64..50) {
        let (v, _) = rise_plateau(seed, 0.005);
        let r = detect(&Trace::strided(stride, v).unwrap(), "m", &DetectorConfig::default(), stride).unwrap();
        prop_assert!(r.k_hat > 0 && r.k_hat % stride == 0);
    }
}

#[test]
fn given_rise_is_respected() {
    let (v, start) = rise_plateau(3, 0.005);
    let cfg = DetectorConfig {
        rise_mode: RiseMode::Given(start + 5),
        ..DetectorConfig::default()
    };
    let r = detect(&Trace::strided(10, v).unwrap(), "m", &cfg, 10).unwrap();
    assert_eq!(r.t_rise, start + 5);
    assert!(r.t_stab >= start + 5);
}

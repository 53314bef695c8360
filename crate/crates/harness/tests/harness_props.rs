use std::collections::BTreeSet;

use eseize_core::data::{Dataset, Split, SyntheticTask};
use eseize_core::nn::{Arch, Model, OptimizerKind, OptimizerState, Scope};
use eseize_core::rng::{rng_from_seed, Stream};
use eseize_core::{PrngStreams, Tensor};
use eseize_harness::config::{DatasetConfig, MetricToggles, UnfreezeConfig};
use eseize_harness::eval::accuracy;
use eseize_harness::pool::{thread_count, THREADS_ENV};
use eseize_harness::store::{to_json, write_run, CHECKPOINT_FILE, REPORT_FILE, TRACE_FILE};
use eseize_harness::sweep::aggregate;
use eseize_harness::{
    autorun, evaluate, random_ks, run_training, sweep_k, ExperimentConfig, Prepared, RunStatus, TraceFile,
};
use rand::seq::SliceRandom;
use rand::Rng;

fn blobs(total_steps: u64, stride: u64) -> ExperimentConfig {
    ExperimentConfig {
        arch: Arch::Mlp {
            input_dim: 2,
            hidden: 16,
            depth: 2,
        },
        dataset: DatasetConfig::Synthetic {
            task: SyntheticTask::GaussBlobs,
            n_train: 1000,
            n_test: 500,
            noise_sd: 0.05,
            seed: 0,
        },
        total_steps,
        stride,
        metric_sample_size: 128,
        ..ExperimentConfig::default()
    }
}

#[test]
fn baseline_reaches_high_accuracy_on_separable_blobs() {
    let cfg = ExperimentConfig {
        metrics: MetricToggles::none(),
        ..blobs(2000, 10)
    };
    let data = Prepared::load(&cfg).unwrap();
    let run = run_training(&cfg, 0, &data).unwrap();
    let acc = run.eval.unwrap().id_acc;
    // Measured once at 100.0; four well-separated blobs leave no room for error.
    assert!(acc >= 95.0, "{acc}");
}

#[test]
fn one_trace_row_per_stride() {
    for (n, stride) in [(205u64, 10u64), (200, 10), (57, 7), (9, 10)] {
        let cfg = ExperimentConfig {
            metrics: MetricToggles {
                trf: true,
                s_avg: false,
                s_worst: false,
            },
            ..blobs(n, stride)
        };
        let data = Prepared::load(&cfg).unwrap();
        let run = run_training(&cfg, 1, &data).unwrap();
        assert_eq!(run.trace.records.len() as u64, n / stride, "N={n} stride={stride}");
        let steps: Vec<u64> = run.trace.records.iter().map(|r| r.step).collect();
        let want: Vec<u64> = (0..n / stride).map(|i| i * stride).collect();
        assert_eq!(steps, want);
    }
}

#[test]
fn repeated_runs_write_identical_bytes() {
    let cfg = blobs(120, 10);
    let data = Prepared::load(&cfg).unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut written = Vec::new();
    for d in &dirs {
        let run = run_training(&cfg, 4, &data).unwrap();
        written.push(write_run(d.path(), &run, &cfg.to_json_pretty(), true).unwrap());
    }
    for f in [TRACE_FILE, REPORT_FILE, CHECKPOINT_FILE] {
        assert_eq!(
            std::fs::read(written[0].join(f)).unwrap(),
            std::fs::read(written[1].join(f)).unwrap(),
            "{f}"
        );
    }
    let name = written[0].file_name().unwrap().to_str().unwrap().to_string();
    assert_eq!(name, format!("run_{}_4", cfg.hash()));
    let report = std::fs::read_to_string(written[0].join(REPORT_FILE)).unwrap();
    assert!(report.contains(&cfg.hash()) && report.contains("\"seed\": 4"));
    let trace = TraceFile::load(&written[0].join(TRACE_FILE)).unwrap();
    assert_eq!(trace.meta_value("seed"), Some("4"));
}

/// Plain loop: same init, same epoch permutations, no interventions.
fn plain_training(cfg: &ExperimentConfig, seed: u64, data: &Prepared) -> Model {
    let streams = PrngStreams::new(seed);
    let mut model = Model::new(cfg.arch, data.train.n_classes, &streams).unwrap();
    let mut opt = OptimizerState::new(cfg.optimizer.kind, cfg.optimizer.lr);
    let n = data.train.len();
    let per_epoch = n / cfg.batch_size;
    let mut order: Vec<usize> = Vec::new();
    let mut step = 0u64;
    'outer: for epoch in 0.. {
        let mut rng = streams.substream(Stream::Shuffle, epoch);
        order.clear();
        order.extend(0..n);
        order.shuffle(&mut rng);
        for b in 0..per_epoch {
            if step == cfg.total_steps {
                break 'outer;
            }
            let batch = data.train.subset(&order[b * cfg.batch_size..(b + 1) * cfg.batch_size]);
            let (_, g) = model.loss_and_grad(&batch.x, &batch.y, &Scope::all(&model)).unwrap();
            opt.step(&mut model, &g).unwrap();
            step += 1;
        }
    }
    model
}

#[test]
fn baseline_run_equals_plain_training_bitwise() {
    for kind in [
        OptimizerKind::adamw_default(),
        OptimizerKind::SgdMomentum {
            momentum: 0.9,
            weight_decay: 0.0,
        },
    ] {
        let mut cfg = ExperimentConfig {
            metrics: MetricToggles::none(),
            batch_size: 48,
            ..blobs(70, 10)
        };
        cfg.optimizer.kind = kind;
        let data = Prepared::load(&cfg).unwrap();
        let run = run_training(&cfg, 9, &data).unwrap();
        let plain = plain_training(&cfg, 9, &data);
        let bits = |m: &Model| -> Vec<u64> { m.flat_params(&Scope::all(m)).iter().map(|v| v.to_bits()).collect() };
        assert_eq!(bits(&run.model), bits(&plain), "{kind:?}");
    }
}

#[test]
fn uniform_random_labels_give_chance_accuracy() {
    let (n, c) = (10_000usize, 4usize);
    let mut rng = rng_from_seed(17);
    let x = Tensor::from_vec(&[n, 2], (0..2 * n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let y = (0..n).map(|_| rng.random_range(0..c)).collect();
    let data = Dataset::new(x, y, c, Split::Test, None).unwrap();
    let model = Model::new(
        Arch::Mlp {
            input_dim: 2,
            hidden: 8,
            depth: 1,
        },
        c,
        &PrngStreams::new(2),
    )
    .unwrap();
    let acc = accuracy(&model, &data).unwrap() / 100.0;
    let p = 1.0 / c as f64;
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    assert!((acc - p).abs() <= 3.0 * sigma, "{acc} vs {p} (3 sigma {})", 3.0 * sigma);
}

#[test]
fn memorizer_on_one_point_and_ood_mean() {
    let x = Tensor::from_vec(&[1, 2], vec![0.2, 0.7]).unwrap();
    let one = Dataset::new(x, vec![0], 2, Split::Test, None).unwrap();
    let arch = Arch::Mlp {
        input_dim: 2,
        hidden: 4,
        depth: 1,
    };
    // All-zero logits tie, and ties resolve to class 0.
    let model = Model::zeros(arch, 2).unwrap();
    assert_eq!(accuracy(&model, &one).unwrap(), 100.0);

    let cfg = blobs(50, 10);
    let data = Prepared::load(&cfg).unwrap();
    let run = run_training(&cfg, 0, &data).unwrap();
    let e = evaluate(&run.model, &data.test, &data.suite).unwrap();
    let hand: f64 = e.ood.iter().map(|c| c.acc).sum::<f64>() / e.ood.len() as f64;
    assert!((e.ood_mean - hand).abs() < 1e-12);
    assert_eq!(e, run.eval.unwrap());
}

#[test]
fn sweep_table_shape_and_self_baseline() {
    let cfg = ExperimentConfig {
        metrics: MetricToggles::none(),
        ..blobs(200, 10)
    };
    let data = Prepared::load(&cfg).unwrap();
    let seeds = [0u64, 1, 2];
    let table = sweep_k(&cfg, &[50, 0, 10], &seeds, &data, None).unwrap();
    let ks: Vec<u64> = table.rows.iter().map(|r| r.k).collect();
    assert_eq!(ks, [0, 10, 50]);
    let base = table.row(0).unwrap();
    assert_eq!((base.delta_id.mean, base.delta_ood.mean), (0.0, 0.0));
    assert_eq!(table.runs.len(), 9);
    assert!(table.rows.iter().all(|r| r.n_ok == 3 && r.n_failed == 0));

    // Adding a seed moves each mean by at most the largest deviation of the
    // new value from the old mean.
    let fewer = aggregate(&cfg, &ks, &seeds[..2], table.runs.clone());
    for (a, b) in fewer.rows.iter().zip(&table.rows) {
        let new = table
            .runs
            .iter()
            .find(|r| r.k == a.k && r.seed == 2)
            .and_then(|r| r.eval.as_ref())
            .unwrap();
        let bound = (new.ood_mean - a.ood.mean).abs();
        assert!((b.ood.mean - a.ood.mean).abs() <= bound + 1e-12);
    }
    assert!(sweep_k(&cfg, &[10, 50], &seeds, &data, None).is_err());
}

#[test]
fn diverged_runs_are_reported_and_excluded() {
    let mut cfg = ExperimentConfig {
        metrics: MetricToggles::none(),
        ..blobs(60, 10)
    };
    cfg.optimizer.lr = 1e200;
    let data = Prepared::load(&cfg).unwrap();
    let run = run_training(&cfg, 0, &data).unwrap();
    assert!(matches!(run.status, RunStatus::Diverged { .. }));
    assert!(run.eval.is_none());
    assert!(to_json(&run.report()).contains("\"status\": \"diverged\""));

    let table = sweep_k(&cfg, &[0, 5], &[0, 1], &data, None).unwrap();
    for r in &table.rows {
        assert_eq!((r.n_ok, r.n_failed), (0, 2));
        assert!(r.id.mean.is_nan());
    }
}

#[test]
fn autorun_trains_each_distinct_k_once() {
    let cfg = ExperimentConfig {
        metrics: MetricToggles::none(),
        seeds: vec![0, 1],
        ..blobs(300, 10)
    };
    let data = Prepared::load(&cfg).unwrap();
    let out = autorun(&cfg, &data, None).unwrap();
    let r = &out.report;
    assert_eq!(r.random_ks, random_ks(0, cfg.k_max(), 10));
    assert_eq!(r.phase_a_seed, 0);
    let mut expect: BTreeSet<u64> = r.random_ks.iter().copied().collect();
    for m in &r.metrics {
        if let Some(k) = m.k_hat {
            expect.insert(k);
            assert_eq!(k % cfg.stride, 0);
            assert_eq!(m.wr.unwrap(), m.wins.unwrap() as f64 / 10.0);
        } else {
            assert!(m.error.is_some());
        }
    }
    let trained: Vec<u64> = r.results.iter().map(|x| x.k).collect();
    assert_eq!(trained, expect.into_iter().collect::<Vec<_>>());
    assert!(r.results.iter().all(|x| x.id_acc.n + x.n_failed == 2));
    assert_eq!(out.phase_a.trace.meta_value("k"), Some("head_only"));
    assert!((out.phase_a.final_trainable_fraction - 68.0 / 388.0).abs() < 1e-12);
}

#[test]
fn thread_cap_follows_environment() {
    std::env::set_var(THREADS_ENV, "3");
    assert_eq!(thread_count(), 3);
    std::env::set_var(THREADS_ENV, "0");
    assert!(thread_count() >= 1);
    std::env::set_var(THREADS_ENV, "junk");
    assert!(thread_count() >= 1);
    std::env::remove_var(THREADS_ENV);
}

#[test]
fn explicit_k_in_config_runs_that_schedule() {
    let cfg = ExperimentConfig {
        metrics: MetricToggles::none(),
        unfreeze: UnfreezeConfig {
            k: 20,
            ..UnfreezeConfig::default()
        },
        ..blobs(60, 10)
    };
    let data = Prepared::load(&cfg).unwrap();
    let run = run_training(&cfg, 0, &data).unwrap();
    assert_eq!(run.k, 20);
    // Head, then block1 at step 20, then block0 at step 40.
    let (head, block1, all) = (16 * 4 + 4, 16 * 16 + 16, 388);
    let counts: Vec<usize> = run.trace.records.iter().map(|r| r.n_trainable).collect();
    assert_eq!(counts, [head, head, head + block1, head + block1, all, all]);
    assert_eq!(run.model.n_trainable_params(), all);
}

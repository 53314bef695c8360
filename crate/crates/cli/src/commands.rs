use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use eseize_core::detect::{select_khat, DetectionResult, DetectorConfig, RiseMode};
use eseize_harness::config::run_dir_name;
use eseize_harness::store::to_json;
use eseize_harness::sweep::{parse_ks, run_grid, sweep_k};
use eseize_harness::{autorun as run_autorun, ExperimentConfig, Prepared, RunReport, TraceFile};
use serde::Serialize;

use crate::fail::Failure;
use crate::lock::OutputLock;
use crate::report::{write_report, Format};

pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_JSON: &str = "sweep.json";
pub const AUTORUN_JSON: &str = "autorun.json";
pub const AUTORUN_CSV: &str = "autorun.csv";
pub const DETECTION_JSON: &str = "detection.json";

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    if !path.exists() {
        return Err(Failure::input(format!("config file {} does not exist", path.display())));
    }
    let cfg = ExperimentConfig::load(path)?;
    cfg.validate()?;
    Ok(cfg)
}

fn summarize(r: &RunReport) -> String {
    let dir = run_dir_name(&r.config_hash, r.seed);
    match &r.eval {
        Some(e) => format!("{dir}: k={} id_acc={:.2} ood_acc={:.2}", r.k, e.id_acc, e.ood_mean),
        None => format!("{dir}: k={} failed ({:?})", r.k, r.status),
    }
}

fn check_diverged(reports: &[RunReport]) -> Result<(), Failure> {
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.status.is_ok())
        .map(|r| format!("k={} seed={}", r.k, r.seed))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::diverged(format!("{} run(s) diverged: {}", failed.len(), failed.join(", "))))
    }
}

pub fn train(config: &Path, seed: Option<u64>, out: &Path) -> Result<(), Failure> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    let data = Prepared::load(&cfg)?;
    let _lock = OutputLock::acquire(out)?;
    let reports = run_grid(std::slice::from_ref(&cfg), &cfg.seeds, &data, Some(out))?;
    for r in &reports {
        println!("{}", summarize(r));
    }
    check_diverged(&reports)
}

pub fn sweep(config: &Path, ks: &str, out: &Path) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let ks = parse_ks(ks, cfg.k_max())?;
    let data = Prepared::load(&cfg)?;
    let _lock = OutputLock::acquire(out)?;
    let table = sweep_k(&cfg, &ks, &cfg.seeds, &data, Some(out))?;
    let mut csv = Vec::new();
    table.write_csv(&mut csv)?;
    fs::write(out.join(SWEEP_CSV), &csv)?;
    fs::write(out.join(SWEEP_JSON), to_json(&table))?;
    print!("{}", String::from_utf8_lossy(&csv));
    check_diverged(&table.runs)
}

#[derive(Serialize)]
#[serde(untagged)]
enum DetectionEntry {
    Found(DetectionResult),
    Failed { metric: String, error: String },
}

pub fn detect(trace: &Path, tau: usize, eps: f64, stride: Option<u64>, out: Option<&Path>) -> Result<(), Failure> {
    let file = TraceFile::load(trace)?;
    let stride = stride
        .or_else(|| file.stride())
        .ok_or_else(|| Failure::input(format!("{}: cannot infer the record stride; pass --stride", trace.display())))?;
    if stride == 0 {
        return Err(Failure::input("stride must be positive"));
    }
    let cfg = DetectorConfig {
        tau,
        eps,
        rise_mode: RiseMode::Auto,
    };
    cfg.validate()?;
    let traces = file.metric_traces()?;
    if traces.is_empty() {
        return Err(Failure::detection(format!("{}: no recorded metric column", trace.display())));
    }
    let mut entries = BTreeMap::new();
    let mut failures = Vec::new();
    for (metric, result) in select_khat(&traces, &cfg, stride) {
        let entry = match result {
            Ok(d) => DetectionEntry::Found(d),
            Err(e) => {
                failures.push(format!("{metric}: {e}"));
                DetectionEntry::Failed {
                    metric: metric.clone(),
                    error: e.to_string(),
                }
            }
        };
        entries.insert(metric, entry);
    }
    let json = to_json(&entries);
    let dest = match out {
        Some(p) => p.to_path_buf(),
        None => trace.with_file_name(DETECTION_JSON),
    };
    fs::write(&dest, &json)?;
    print!("{json}");
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::detection(failures.join("; ")))
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.2}"))
}

pub fn autorun(config: &Path, out: &Path) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let data = Prepared::load(&cfg)?;
    let _lock = OutputLock::acquire(out)?;
    let result = run_autorun(&cfg, &data, Some(out))?;
    let report = &result.report;
    fs::write(out.join(AUTORUN_JSON), to_json(report))?;

    let n = report.random_ks.len();
    let mut table = String::from("metric,k_hat,id_acc,ood_acc,wr\n");
    for m in &report.metrics {
        let wr = match (m.wins, m.wr) {
            (Some(w), Some(f)) => format!("{w}/{n} = {f:.2} ({:.0}%)", 100.0 * f),
            _ => "-".into(),
        };
        let k_hat = m.k_hat.map_or("-".into(), |k| k.to_string());
        table.push_str(&format!("{},{k_hat},{},{},{wr}\n", m.metric, opt(m.id_acc), opt(m.ood_acc)));
    }
    fs::write(out.join(AUTORUN_CSV), &table)?;
    print!("{table}");
    for m in &report.metrics {
        if let Some(e) = &m.error {
            eprintln!("{}: {e}", m.metric);
        }
    }
    if report.metrics.iter().all(|m| m.k_hat.is_none()) {
        return Err(Failure::detection("no metric produced a k_hat"));
    }
    Ok(())
}

pub fn report(runs: &Path, format: Format, out: Option<&Path>) -> Result<(), Failure> {
    let out = out.unwrap_or(runs);
    if !runs.is_dir() {
        return Err(Failure::input(format!("{} is not a directory", runs.display())));
    }
    let _lock = OutputLock::acquire(out)?;
    for p in write_report(runs, out, format)? {
        println!("{}", p.display());
    }
    Ok(())
}

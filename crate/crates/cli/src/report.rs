//! Plot data from stored run directories: accuracy deltas against k and
//! normalized metric dynamics.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use eseize_core::detect::normalize;
use eseize_harness::store::{CONFIG_FILE, REPORT_FILE, TRACE_FILE};
use eseize_harness::sweep::Stat;
use eseize_harness::trace::{column, METRIC_COLUMNS};
use eseize_harness::{ExperimentConfig, RunReport, TraceFile};

use crate::fail::Failure;
use crate::svg::{line_chart, Chart, Series};

pub const DELTA_STEM: &str = "delta_vs_k";
pub const DYNAMICS_STEM: &str = "dynamics";
pub const DELTA_HEADER: [&str; 8] = [
    "family",
    "k",
    "n_ok",
    "n_failed",
    "mean_delta_id",
    "std_delta_id",
    "mean_delta_ood",
    "std_delta_ood",
];
pub const DYNAMICS_HEADER: [&str; 4] = ["run", "metric", "step", "value"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Svg,
}

pub struct RunArtifacts {
    /// Run directory relative to the collection root, `/`-separated.
    pub label: String,
    pub report: RunReport,
    pub config: ExperimentConfig,
    pub trace: Option<TraceFile>,
}

/// Every directory under `root` holding a run report, in path order.
pub fn collect(root: &Path) -> Result<Vec<RunArtifacts>, Failure> {
    if !root.is_dir() {
        return Err(Failure::input(format!("{} is not a directory", root.display())));
    }
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| Failure::input(e.to_string()))?;
        if entry.file_name() != REPORT_FILE {
            continue;
        }
        let dir = entry.path().parent().expect("file has a parent");
        let text = fs::read_to_string(entry.path())?;
        let report: RunReport = serde_json::from_str(&text)
            .map_err(|e| Failure::input(format!("{}: {e}", entry.path().display())))?;
        let config = ExperimentConfig::load(&dir.join(CONFIG_FILE))?;
        let trace_path = dir.join(TRACE_FILE);
        let trace = if trace_path.exists() {
            Some(TraceFile::load(&trace_path)?)
        } else {
            None
        };
        let label = dir
            .strip_prefix(root)
            .unwrap_or(dir)
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        out.push(RunArtifacts {
            label,
            report,
            config,
            trace,
        });
    }
    if out.is_empty() {
        return Err(Failure::input(format!("no run artifacts under {}", root.display())));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaRow {
    pub family: String,
    pub k: u64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub delta_id: Stat,
    pub delta_ood: Stat,
}

/// Runs that differ only in k form a family (keyed by the hash of the k = 0
/// config). Deltas pair each successful run with the successful k = 0 run
/// of the same seed; families without a baseline are skipped. Head-only
/// runs (k beyond k_max) are not part of any curve.
pub fn delta_rows(runs: &[RunArtifacts]) -> Vec<DeltaRow> {
    let mut families: BTreeMap<String, Vec<&RunArtifacts>> = BTreeMap::new();
    for r in runs {
        if r.report.k <= r.config.k_max() {
            families.entry(r.config.with_k(0).hash()).or_default().push(r);
        }
    }
    let mut rows = Vec::new();
    for (family, members) in families {
        let ok = |k: u64, seed: u64| {
            members
                .iter()
                .find(|r| r.report.k == k && r.report.seed == seed && r.report.status.is_ok())
                .and_then(|r| r.report.eval.as_ref())
        };
        let ks: BTreeSet<u64> = members.iter().map(|r| r.report.k).collect();
        if !ks.contains(&0) {
            continue;
        }
        for k in ks {
            let at_k: Vec<_> = members.iter().filter(|r| r.report.k == k).collect();
            let n_ok = at_k.iter().filter(|r| r.report.status.is_ok()).count();
            let (mut did, mut dood) = (Vec::new(), Vec::new());
            let seeds: BTreeSet<u64> = at_k.iter().map(|r| r.report.seed).collect();
            for seed in seeds {
                if let (Some(e), Some(b)) = (ok(k, seed), ok(0, seed)) {
                    did.push(e.id_acc - b.id_acc);
                    dood.push(e.ood_mean - b.ood_mean);
                }
            }
            rows.push(DeltaRow {
                family: family.clone(),
                k,
                n_ok,
                n_failed: at_k.len() - n_ok,
                delta_id: Stat::of(&did),
                delta_ood: Stat::of(&dood),
            });
        }
    }
    rows
}

/// `(run, metric, normalized points)` for every metric column that was
/// recorded and is not constant.
pub fn dynamics(runs: &[RunArtifacts]) -> Vec<(String, String, Vec<(u64, f64)>)> {
    let mut out = Vec::new();
    for r in runs {
        let Some(trace) = &r.trace else { continue };
        for name in METRIC_COLUMNS {
            let values: Vec<f64> = trace.records.iter().map(|rec| column(rec, name)).collect();
            let Ok(norm) = normalize(&values) else { continue };
            let steps = trace.records.iter().map(|rec| rec.step);
            out.push((r.label.clone(), name.to_string(), steps.zip(norm).collect()));
        }
    }
    out
}

fn csv_bytes<I, R>(header: &[&str], rows: I) -> Result<Vec<u8>, Failure>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let err = |e: csv::Error| Failure::input(e.to_string());
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(row).map_err(err)?;
    }
    w.into_inner().map_err(|e| Failure::input(e.to_string()))
}

pub fn delta_csv(rows: &[DeltaRow]) -> Result<Vec<u8>, Failure> {
    csv_bytes(
        &DELTA_HEADER,
        rows.iter().map(|r| {
            vec![
                r.family.clone(),
                r.k.to_string(),
                r.n_ok.to_string(),
                r.n_failed.to_string(),
                r.delta_id.mean.to_string(),
                r.delta_id.std.to_string(),
                r.delta_ood.mean.to_string(),
                r.delta_ood.std.to_string(),
            ]
        }),
    )
}

pub fn dynamics_csv(curves: &[(String, String, Vec<(u64, f64)>)]) -> Result<Vec<u8>, Failure> {
    csv_bytes(
        &DYNAMICS_HEADER,
        curves.iter().flat_map(|(run, metric, pts)| {
            pts.iter()
                .map(move |(step, v)| vec![run.clone(), metric.clone(), step.to_string(), v.to_string()])
        }),
    )
}

/// Delta curves on a `log10(1 + k)` axis so that k = 0 stays visible.
pub fn delta_svg(rows: &[DeltaRow]) -> String {
    let families: BTreeSet<&str> = rows.iter().map(|r| r.family.as_str()).collect();
    let mut series = Vec::new();
    for fam in &families {
        let prefix = if families.len() > 1 { format!("{fam} ") } else { String::new() };
        let pick = |f: fn(&DeltaRow) -> f64| -> Vec<(f64, f64)> {
            rows.iter()
                .filter(|r| r.family == *fam)
                .map(|r| ((1.0 + r.k as f64).log10(), f(r)))
                .collect()
        };
        series.push(Series {
            label: format!("{prefix}ΔID"),
            points: pick(|r| r.delta_id.mean),
        });
        series.push(Series {
            label: format!("{prefix}ΔOOD"),
            points: pick(|r| r.delta_ood.mean),
        });
    }
    line_chart(&Chart {
        title: "Accuracy change against the unfreezing interval",
        x_label: "log10(1 + k)",
        y_label: "Δ accuracy (points)",
        series: &series,
    })
}

pub fn dynamics_svg(curves: &[(String, String, Vec<(u64, f64)>)]) -> String {
    let series: Vec<Series> = curves
        .iter()
        .map(|(run, metric, pts)| Series {
            label: format!("{run} {metric}"),
            points: pts.iter().map(|&(s, v)| (s as f64, v)).collect(),
        })
        .collect();
    line_chart(&Chart {
        title: "Normalized metric dynamics",
        x_label: "step",
        y_label: "normalized value",
        series: &series,
    })
}

/// Writes both figures into `out` and returns the written paths.
pub fn write_report(runs_dir: &Path, out: &Path, format: Format) -> Result<Vec<PathBuf>, Failure> {
    let runs = collect(runs_dir)?;
    let rows = delta_rows(&runs);
    let curves = dynamics(&runs);
    let (ext, delta, dyn_bytes) = match format {
        Format::Csv => ("csv", delta_csv(&rows)?, dynamics_csv(&curves)?),
        Format::Svg => ("svg", delta_svg(&rows).into_bytes(), dynamics_svg(&curves).into_bytes()),
    };
    fs::create_dir_all(out)?;
    let paths = vec![
        out.join(format!("{DELTA_STEM}.{ext}")),
        out.join(format!("{DYNAMICS_STEM}.{ext}")),
    ];
    fs::write(&paths[0], delta)?;
    fs::write(&paths[1], dyn_bytes)?;
    Ok(paths)
}

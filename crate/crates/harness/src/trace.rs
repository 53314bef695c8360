//! Trace CSV: `#key=value` metadata lines, then the fixed header and one
//! row per record. Floats use the shortest round-trip form; disabled
//! metrics are `NaN`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use eseize_core::detect::Trace;
use eseize_core::metrics::MetricRecord;

use crate::error::{HarnessError, Result};

pub const HEADER: [&str; 6] = ["step", "trf", "s_avg", "s_worst", "loss", "n_trainable"];
pub const METRIC_COLUMNS: [&str; 3] = ["trf", "s_avg", "s_worst"];

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    /// Ordered metadata written as `#key=value` lines.
    pub meta: Vec<(String, String)>,
    pub records: Vec<MetricRecord>,
}

fn csv_err(e: csv::Error) -> HarnessError {
    HarnessError::Format(format!("trace csv: {e}"))
}

impl TraceFile {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        for (k, v) in &self.meta {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(HarnessError::Format(format!("bad metadata entry {k:?}")));
            }
            writeln!(out, "#{k}={v}")?;
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(HEADER).map_err(csv_err)?;
        for r in &self.records {
            w.write_record([
                r.step.to_string(),
                r.trf.to_string(),
                r.s_avg.to_string(),
                r.s_worst.to_string(),
                r.loss.to_string(),
                r.n_trainable.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut text = String::new();
        input.read_to_string(&mut text)?;
        let mut meta = Vec::new();
        let mut body_start = 0;
        for line in text.split_inclusive('\n') {
            let Some(rest) = line.strip_prefix('#') else { break };
            let rest = rest.trim_end_matches(['\n', '\r']);
            let (k, v) = rest
                .split_once('=')
                .ok_or_else(|| HarnessError::Format(format!("metadata line without '=': {rest:?}")))?;
            meta.push((k.to_string(), v.to_string()));
            body_start += line.len();
        }
        let mut rd = csv::ReaderBuilder::new().from_reader(text[body_start..].as_bytes());
        let header = rd.headers().map_err(csv_err)?.clone();
        if header.iter().collect::<Vec<_>>() != HEADER {
            return Err(HarnessError::Format(format!(
                "trace header must be {}, got {}",
                HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut records = Vec::new();
        for (i, row) in rd.records().enumerate() {
            let row = row.map_err(csv_err)?;
            let f = |j: usize| -> Result<f64> {
                row[j]
                    .parse::<f64>()
                    .map_err(|_| HarnessError::Format(format!("row {}: bad {} value {:?}", i + 1, HEADER[j], &row[j])))
            };
            let int = |j: usize| -> Result<u64> {
                row[j]
                    .parse::<u64>()
                    .map_err(|_| HarnessError::Format(format!("row {}: bad {} value {:?}", i + 1, HEADER[j], &row[j])))
            };
            records.push(MetricRecord {
                step: int(0)?,
                trf: f(1)?,
                s_avg: f(2)?,
                s_worst: f(3)?,
                loss: f(4)?,
                n_trainable: int(5)? as usize,
            });
        }
        Ok(Self { meta, records })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)
            .map_err(|e| HarnessError::Config(format!("cannot open trace {}: {e}", path.display())))?;
        Self::read_from(f)
    }

    /// Record stride from the metadata, or from the step spacing.
    pub fn stride(&self) -> Option<u64> {
        if let Some(s) = self.meta_value("stride").and_then(|v| v.parse().ok()) {
            return Some(s);
        }
        match self.records.as_slice() {
            [a, b, ..] if b.step > a.step => Some(b.step - a.step),
            _ => None,
        }
    }

    /// One detector trace per metric column that has no NaN.
    pub fn metric_traces(&self) -> Result<BTreeMap<String, Trace>> {
        let steps: Vec<u64> = self.records.iter().map(|r| r.step).collect();
        let mut out = BTreeMap::new();
        for name in METRIC_COLUMNS {
            let values: Vec<f64> = self.records.iter().map(|r| column(r, name)).collect();
            if values.iter().any(|v| v.is_nan()) {
                continue;
            }
            out.insert(name.to_string(), Trace::new(steps.clone(), values)?);
        }
        Ok(out)
    }
}

pub fn column(r: &MetricRecord, name: &str) -> f64 {
    match name {
        "trf" => r.trf,
        "s_avg" => r.s_avg,
        "s_worst" => r.s_worst,
        "loss" => r.loss,
        _ => f64::NAN,
    }
}

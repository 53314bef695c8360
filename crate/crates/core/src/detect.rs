//! Stabilization detection on metric traces.
//!
//! A trace is min-max normalized, smoothed with a trailing moving average,
//! and differenced. The rapid-change phase ends at the first small difference
//! after the largest one; the stabilization index is the first small
//! difference from there on. `k_hat` is that index times the record stride.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    steps: Vec<u64>,
    values: Vec<f64>,
}

impl Trace {
    pub fn new(steps: Vec<u64>, values: Vec<f64>) -> Result<Self> {
        if steps.len() != values.len() {
            return Err(Error::input(format!(
                "trace has {} steps and {} values",
                steps.len(),
                values.len()
            )));
        }
        if steps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::input("trace steps must be strictly increasing"));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::input("trace contains NaN"));
        }
        Ok(Self { steps, values })
    }

    /// Trace recorded at steps `0, stride, 2*stride, ...`.
    pub fn strided(stride: u64, values: Vec<f64>) -> Result<Self> {
        let steps = (0..values.len() as u64).map(|i| i * stride).collect();
        Self::new(steps, values)
    }

    pub fn steps(&self) -> &[u64] {
        &self.steps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiseMode {
    #[default]
    Auto,
    Given(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub tau: usize,
    pub eps: f64,
    pub rise_mode: RiseMode,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            tau: 3,
            eps: 0.02,
            rise_mode: RiseMode::Auto,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau == 0 {
            return Err(Error::input("tau must be at least 1"));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::input(format!("eps must lie in (0, 1), got {}", self.eps)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub metric: String,
    pub t_rise: usize,
    pub t_stab: usize,
    pub k_hat: u64,
    pub tau: usize,
    pub eps: f64,
}

/// Min-max rescale to [0, 1].
pub fn normalize(values: &[f64]) -> Result<Vec<f64>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateTrace("non-finite value".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::DegenerateTrace("constant or empty trace".into()));
    }
    Ok(values.iter().map(|v| (v - lo) / (hi - lo)).collect())
}

/// Trailing-window means; output index `j` averages `values[j..j + tau]`.
pub fn moving_average(values: &[f64], tau: usize) -> Result<Vec<f64>> {
    if tau == 0 || values.len() < tau {
        return Err(Error::input(format!(
            "moving average of {} values with window {tau}",
            values.len()
        )));
    }
    Ok(values.windows(tau).map(|w| w.iter().sum::<f64>() / tau as f64).collect())
}

fn smoothed_diffs(values: &[f64], tau: usize) -> Result<Vec<f64>> {
    let ma = moving_average(values, tau)?;
    if ma.len() < 2 {
        return Err(Error::DegenerateTrace(format!("too short for window {tau}")));
    }
    Ok(ma.windows(2).map(|w| (w[1] - w[0]).abs()).collect())
}

/// End of the initial rapid change on a normalized trace: the first index
/// after the largest smoothed difference whose difference is at most `eps`.
/// If even the largest difference is within `eps`, or none follows, the
/// index of the largest one.
pub fn find_rapid_change_end(normalized: &[f64], cfg: &DetectorConfig) -> Result<usize> {
    cfg.validate()?;
    let d = smoothed_diffs(normalized, cfg.tau)?;
    let mut i_star = 0;
    for (i, &v) in d.iter().enumerate() {
        if v > d[i_star] {
            i_star = i;
        }
    }
    if d[i_star] <= cfg.eps {
        return Ok(i_star);
    }
    Ok((i_star + 1..d.len()).find(|&j| d[j] <= cfg.eps).unwrap_or(i_star))
}

/// First index at or after `t_rise` where the smoothed trace changes by at
/// most `eps` between consecutive windows.
pub fn find_stabilization_by_mean(values: &[f64], t_rise: usize, cfg: &DetectorConfig) -> Result<usize> {
    cfg.validate()?;
    if t_rise >= values.len() {
        return Err(Error::input(format!("t_rise {t_rise} beyond trace of {}", values.len())));
    }
    let d = smoothed_diffs(&values[t_rise..], cfg.tau)?;
    d.iter()
        .position(|&v| v <= cfg.eps)
        .map(|j| j + t_rise)
        .ok_or_else(|| Error::NotStabilized(format!("no smoothed change <= {} after index {t_rise}", cfg.eps)))
}

/// Runs the detector on one trace; `k_hat = stride * t_stab` must be positive.
pub fn detect(trace: &Trace, metric: &str, cfg: &DetectorConfig, stride: u64) -> Result<DetectionResult> {
    cfg.validate()?;
    if stride == 0 {
        return Err(Error::input("stride must be positive"));
    }
    if trace.len() < 2 * cfg.tau + 2 {
        return Err(Error::DegenerateTrace(format!(
            "{metric}: {} records, need at least {}",
            trace.len(),
            2 * cfg.tau + 2
        )));
    }
    let norm = normalize(trace.values()).map_err(|e| Error::DegenerateTrace(format!("{metric}: {e}")))?;
    let t_rise = match cfg.rise_mode {
        RiseMode::Auto => find_rapid_change_end(&norm, cfg)?,
        RiseMode::Given(t) => t,
    };
    let t_stab = find_stabilization_by_mean(&norm, t_rise, cfg).map_err(|e| match e {
        Error::NotStabilized(m) => Error::NotStabilized(format!("{metric}: {m}")),
        other => other,
    })?;
    if t_stab == 0 {
        return Err(Error::NotStabilized(format!("{metric}: stable from the first record, no rapid phase")));
    }
    Ok(DetectionResult {
        metric: metric.to_string(),
        t_rise,
        t_stab,
        k_hat: stride * t_stab as u64,
        tau: cfg.tau,
        eps: cfg.eps,
    })
}

/// Per-metric detection; failures stay in the map next to the successes.
pub fn select_khat(
    traces: &BTreeMap<String, Trace>,
    cfg: &DetectorConfig,
    stride: u64,
) -> BTreeMap<String, Result<DetectionResult>> {
    traces
        .iter()
        .map(|(name, t)| (name.clone(), detect(t, name, cfg, stride)))
        .collect()
}

/// Detection while training: records arrive one at a time and the trace
/// seen so far is normalized with its running min and max.
#[derive(Debug, Clone)]
pub struct OnlineDetector {
    metric: String,
    cfg: DetectorConfig,
    stride: u64,
    values: Vec<f64>,
    result: Option<DetectionResult>,
}

impl OnlineDetector {
    pub fn new(metric: &str, cfg: DetectorConfig, stride: u64) -> Result<Self> {
        cfg.validate()?;
        if stride == 0 {
            return Err(Error::input("stride must be positive"));
        }
        Ok(Self {
            metric: metric.to_string(),
            cfg,
            stride,
            values: Vec::new(),
            result: None,
        })
    }

    /// Adds the next record; returns the detection once it first succeeds.
    pub fn push(&mut self, value: f64) -> Result<Option<&DetectionResult>> {
        if value.is_nan() {
            return Err(Error::input("NaN record"));
        }
        self.values.push(value);
        if self.result.is_none() && self.values.len() >= 2 * self.cfg.tau + 2 {
            let trace = Trace::strided(self.stride, self.values.clone())?;
            match detect(&trace, &self.metric, &self.cfg, self.stride) {
                Ok(r) => {
                    // Only a detection with a completed rise counts: the
                    // largest change must lie before the stable point.
                    let norm = normalize(&self.values)?;
                    let d = smoothed_diffs(&norm, self.cfg.tau)?;
                    if d.iter().any(|&v| v > self.cfg.eps) {
                        self.result = Some(r);
                        return Ok(self.result.as_ref());
                    }
                }
                Err(Error::NotStabilized(_)) | Err(Error::DegenerateTrace(_)) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(None)
    }

    pub fn result(&self) -> Option<&DetectionResult> {
        self.result.as_ref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> DetectorConfig {
        DetectorConfig::default()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[2.0, 4.0, 6.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        let unit = [0.0, 0.3, 1.0, 0.7];
        assert_eq!(normalize(&unit).unwrap(), unit.to_vec());
        assert!(matches!(normalize(&[3.0, 3.0]), Err(Error::DegenerateTrace(_))));
    }

    #[test]
    fn moving_average_examples() {
        assert_eq!(moving_average(&[1.0, 5.0, 2.0], 1).unwrap(), vec![1.0, 5.0, 2.0]);
        assert_eq!(moving_average(&[0.0, 0.0, 3.0], 3).unwrap(), vec![1.0]);
        assert_eq!(moving_average(&[1.0, 2.0, 3.0, 4.0], 2).unwrap(), vec![1.5, 2.5, 3.5]);
        assert!(moving_average(&[1.0], 2).is_err());
    }

    const HAND: [f64; 9] = [0.0, 0.2, 0.5, 0.9, 1.0, 0.995, 1.0, 0.998, 1.0];

    #[test]
    fn hand_traced_stabilization() {
        // window means .2333 .5333 .8 .965 .99833 .99767 .99933,
        // differences .3 .2667 .165 .0333 .00067 ...
        assert_eq!(find_stabilization_by_mean(&HAND, 0, &cfg()).unwrap(), 4);
        assert_eq!(find_rapid_change_end(&HAND, &cfg()).unwrap(), 4);
    }

    #[test]
    fn step_jump_rise_end() {
        let v: Vec<f64> = (0..30).map(|i| if i < 10 { 0.0 } else { 1.0 }).collect();
        let t = find_rapid_change_end(&v, &cfg()).unwrap();
        assert!((10..=13).contains(&t), "{t}");
    }

    #[test]
    fn slow_ramp_rise_is_the_argmax() {
        let v: Vec<f64> = (0..101).map(|i| i as f64 / 100.0).collect();
        let d = smoothed_diffs(&v, 3).unwrap();
        let imax = (0..d.len()).fold(0, |b, i| if d[i] > d[b] { i } else { b });
        assert_eq!(find_rapid_change_end(&v, &cfg()).unwrap(), imax);
    }

    #[test]
    fn loose_threshold_stabilizes_at_rise() {
        let loose = DetectorConfig { eps: 0.999, ..cfg() };
        assert_eq!(find_stabilization_by_mean(&HAND, 2, &loose).unwrap(), 2);
    }

    #[test]
    fn constant_tail_detected_within_tau() {
        let mut v: Vec<f64> = (0..12).map(|i| (i as f64 / 11.0).powi(2)).collect();
        let tail_start = v.len();
        v.extend(std::iter::repeat(1.0).take(20));
        let t = find_stabilization_by_mean(&v, 0, &cfg()).unwrap();
        assert!(t <= tail_start + 3, "{t}");
    }

    #[test]
    fn khat_is_stride_times_t_stab() {
        let mut v = vec![0.0; 14];
        v.extend(std::iter::repeat(1.0).take(16));
        let given = DetectorConfig {
            rise_mode: RiseMode::Given(21),
            ..cfg()
        };
        let r = detect(&Trace::strided(10, v).unwrap(), "trf", &given, 10).unwrap();
        assert_eq!((r.t_stab, r.k_hat), (21, 210));
    }

    #[test]
    fn flat_start_has_no_positive_khat() {
        let mut v = vec![1.0; 20];
        v[19] = 0.0;
        let r = detect(&Trace::strided(10, v).unwrap(), "s_avg", &cfg(), 10);
        assert!(matches!(r, Err(Error::NotStabilized(_))), "{r:?}");
    }

    #[test]
    fn never_settling_trace_is_not_stabilized() {
        let v: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 0.0 } else { 1.0 }).collect();
        let one = DetectorConfig { tau: 1, ..cfg() };
        assert!(matches!(
            detect(&Trace::strided(10, v).unwrap(), "x", &one, 10),
            Err(Error::NotStabilized(_))
        ));
    }

    #[test]
    fn short_and_constant_traces_are_degenerate() {
        let short = Trace::strided(10, vec![0.0, 1.0, 1.0]).unwrap();
        assert!(matches!(detect(&short, "x", &cfg(), 10), Err(Error::DegenerateTrace(_))));
        let flat = Trace::strided(10, vec![0.5; 12]).unwrap();
        assert!(matches!(detect(&flat, "x", &cfg(), 10), Err(Error::DegenerateTrace(_))));
    }

    #[test]
    fn trace_validation() {
        assert!(Trace::new(vec![0, 10, 10], vec![1.0, 2.0, 3.0]).is_err());
        assert!(Trace::new(vec![0, 10], vec![1.0]).is_err());
        assert!(Trace::new(vec![0, 10], vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn select_keeps_failures_per_metric() {
        let mut traces = BTreeMap::new();
        let mut rise = vec![0.0, 0.3, 0.6, 0.9];
        rise.extend(std::iter::repeat(1.0).take(10));
        traces.insert("trf".to_string(), Trace::strided(10, rise).unwrap());
        traces.insert("s_avg".to_string(), Trace::strided(10, vec![2.0; 14]).unwrap());
        let out = select_khat(&traces, &cfg(), 10);
        assert!(out["trf"].as_ref().unwrap().k_hat > 0);
        assert!(out["s_avg"].is_err());
    }

    #[test]
    fn detection_json_field_order() {
        let r = DetectionResult {
            metric: "trf".into(),
            t_rise: 4,
            t_stab: 4,
            k_hat: 40,
            tau: 3,
            eps: 0.02,
        };
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"metric":"trf","t_rise":4,"t_stab":4,"k_hat":40,"tau":3,"eps":0.02}"#
        );
    }

    #[test]
    fn online_matches_offline_on_a_finished_rise() {
        let mut v: Vec<f64> = (0..8).map(|i| i as f64 / 8.0).collect();
        v.extend(std::iter::repeat(1.0).take(12));
        let mut online = OnlineDetector::new("trf", cfg(), 10).unwrap();
        let mut first = None;
        for &x in &v {
            if let Some(r) = online.push(x).unwrap() {
                first.get_or_insert(r.clone());
            }
        }
        let offline = detect(&Trace::strided(10, v).unwrap(), "trf", &cfg(), 10).unwrap();
        assert_eq!(first.unwrap(), offline);
    }
}

//! One training run: schedules, metric recording and final evaluation.

use eseize_core::data::{Dataset, MetricSample};
use eseize_core::interventions::{apply_interventions, Interventions, UnfreezeSchedule, WarmupSchedule};
use eseize_core::metrics::{sharpness_avg, sharpness_worst, trace_fisher, MetricRecord, ModelObjective};
use eseize_core::nn::{Model, OptimizerState, Scope};
use eseize_core::rng::{PrngStreams, Stream};
use eseize_core::Tensor;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, MetricToggles};
use crate::data::Prepared;
use crate::error::Result;
use crate::eval::{evaluate, EvalResult};
use crate::trace::TraceFile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Diverged { step: u64, message: String },
}

impl RunStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, RunStatus::Ok)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    pub k: u64,
    pub config_hash: String,
    pub model: Model,
    pub trace: TraceFile,
    pub status: RunStatus,
    pub steps_completed: u64,
    pub final_trainable_fraction: f64,
    pub eval: Option<EvalResult>,
}

/// Per-run report written next to the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub seed: u64,
    pub k: u64,
    #[serde(flatten)]
    pub status: RunStatus,
    pub steps_completed: u64,
    pub final_trainable_fraction: f64,
    pub eval: Option<EvalResult>,
}

impl RunOutput {
    pub fn report(&self) -> RunReport {
        RunReport {
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            k: self.k,
            status: self.status.clone(),
            steps_completed: self.steps_completed,
            final_trainable_fraction: self.final_trainable_fraction,
            eval: self.eval.clone(),
        }
    }
}

/// Minibatch order: epoch `e` is a permutation drawn from shuffle substream
/// `e`; the incomplete tail of each epoch is dropped.
struct Batcher {
    streams: PrngStreams,
    n: usize,
    batch: usize,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl Batcher {
    fn new(streams: PrngStreams, n: usize, batch: usize) -> Self {
        let mut b = Self {
            streams,
            n,
            batch,
            epoch: 0,
            order: Vec::new(),
            pos: 0,
        };
        b.reshuffle();
        b
    }

    fn reshuffle(&mut self) {
        let mut rng = self.streams.substream(Stream::Shuffle, self.epoch);
        self.order = (0..self.n).collect();
        self.order.shuffle(&mut rng);
        self.pos = 0;
    }

    fn next(&mut self, data: &Dataset) -> (Tensor, Vec<usize>) {
        if self.pos + self.batch > self.n {
            self.epoch += 1;
            self.reshuffle();
        }
        let idx = &self.order[self.pos..self.pos + self.batch];
        self.pos += self.batch;
        let sub = data.subset(idx);
        (sub.x, sub.y)
    }
}

fn record(
    model: &Model,
    sample: &MetricSample,
    cfg: &ExperimentConfig,
    toggles: MetricToggles,
    streams: &PrngStreams,
    step: u64,
    call: u64,
) -> Result<MetricRecord> {
    let scope = Scope::trainable(model);
    let nan = f64::NAN;
    let trf = if toggles.trf {
        trace_fisher(model, &sample.x, &scope, cfg.fisher_mode, streams, call)?
    } else {
        nan
    };
    let (s_avg, s_worst) = if toggles.s_avg || toggles.s_worst {
        let obj = ModelObjective::new(model, &sample.x, &sample.y, scope.clone())?;
        let a = if toggles.s_avg {
            sharpness_avg(&obj, &cfg.sharpness, streams, call)?
        } else {
            nan
        };
        let w = if toggles.s_worst {
            sharpness_worst(&obj, &cfg.sharpness, streams, call)?.value
        } else {
            nan
        };
        (a, w)
    } else {
        (nan, nan)
    };
    Ok(MetricRecord {
        step,
        trf,
        s_avg,
        s_worst,
        loss: model.loss(&sample.x, &sample.y)?,
        n_trainable: model.n_trainable_params(),
    })
}

pub fn interventions_for(cfg: &ExperimentConfig, unfreeze: UnfreezeSchedule) -> Interventions {
    Interventions {
        unfreeze,
        warmup: WarmupSchedule {
            base_lr: cfg.optimizer.lr,
            divisor: cfg.warmup.divisor,
            switch_step: cfg.warmup.switch_step,
        },
        penalty: cfg.penalty,
    }
}

/// Trains with the configured unfreezing interval and metric columns.
pub fn run_training(cfg: &ExperimentConfig, seed: u64, data: &Prepared) -> Result<RunOutput> {
    let sched = UnfreezeSchedule::new(cfg.unfreeze.k, cfg.arch.n_blocks(), cfg.unfreeze.order);
    run_training_with(cfg, seed, data, sched, cfg.metrics)
}

/// Head-only run: no block below the head is ever unfrozen.
pub fn run_head_only(cfg: &ExperimentConfig, seed: u64, data: &Prepared, toggles: MetricToggles) -> Result<RunOutput> {
    let sched = UnfreezeSchedule::new(u64::MAX, cfg.arch.n_blocks(), cfg.unfreeze.order);
    run_training_with(cfg, seed, data, sched, toggles)
}

pub fn run_training_with(
    cfg: &ExperimentConfig,
    seed: u64,
    data: &Prepared,
    sched: UnfreezeSchedule,
    toggles: MetricToggles,
) -> Result<RunOutput> {
    cfg.validate()?;
    let streams = PrngStreams::new(seed);
    let mut model = Model::new(cfg.arch, data.train.n_classes, &streams)?;
    let mut opt = OptimizerState::new(cfg.optimizer.kind, cfg.optimizer.lr);
    let iv = interventions_for(cfg, sched);
    let sample = MetricSample::draw(&data.train, cfg.metric_sample_size, &streams)?;
    let mut batcher = Batcher::new(streams, data.train.len(), cfg.batch_size);
    let n_records = cfg.total_steps / cfg.stride;
    let mut records = Vec::with_capacity(n_records as usize);
    let mut status = RunStatus::Ok;
    let mut completed = 0;
    for step in 1..=cfg.total_steps {
        let (x, y) = batcher.next(&data.train);
        let before = step - 1;
        if before % cfg.stride == 0 && before / cfg.stride < n_records {
            iv.unfreeze.apply(&mut model, step)?;
            let call = before / cfg.stride;
            match record(&model, &sample, cfg, toggles, &streams, before, call) {
                Ok(r) => records.push(r),
                Err(crate::error::HarnessError::Core(eseize_core::Error::NonFinite(m))) => {
                    status = RunStatus::Diverged { step, message: m };
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        match apply_interventions(step, &iv, &mut opt, &mut model, &x, &y) {
            Ok(_) => completed = step,
            Err(eseize_core::Error::NonFinite(m)) => {
                status = RunStatus::Diverged { step, message: m };
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    let final_trainable_fraction = model.n_trainable_params() as f64 / model.n_params() as f64;
    let eval = if status.is_ok() {
        Some(evaluate(&model, &data.test, &data.suite)?)
    } else {
        None
    };
    let config_hash = cfg.hash();
    let trace = TraceFile {
        meta: vec![
            ("config_hash".into(), config_hash.clone()),
            ("seed".into(), seed.to_string()),
            ("k".into(), k_label(sched.k)),
            ("stride".into(), cfg.stride.to_string()),
            ("metric_sample".into(), hex(&sample.fingerprint()[..8])),
        ],
        records,
    };
    Ok(RunOutput {
        seed,
        k: sched.k,
        config_hash,
        model,
        trace,
        status,
        steps_completed: completed,
        final_trainable_fraction,
        eval,
    })
}

fn k_label(k: u64) -> String {
    if k == u64::MAX {
        "head_only".into()
    } else {
        k.to_string()
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

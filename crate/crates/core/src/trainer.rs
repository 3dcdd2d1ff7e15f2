//! Full-batch Adam on the exact expected objective.

use crate::fmt::num;
use crate::grad::{gradient, GradError};
use crate::models::{init_params, realize, ModelParams};
use crate::objectives::{evaluate, BoundsReport, Objective};
use crate::toygen::ToyProcess;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

pub const TRACE_CSV_HEADER: &str = "step,loss,R,D,elbo,anneal_w";

/// Linear ramp of the rate-term weight from `w_start` at step `start` to
/// `w_end` at step `end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub w_start: f64,
    pub w_end: f64,
    pub start: usize,
    pub end: usize,
}

pub fn anneal_weight(schedule: &AnnealSchedule, step: usize) -> f64 {
    if step <= schedule.start {
        return schedule.w_start;
    }
    if step >= schedule.end {
        return schedule.w_end;
    }
    let t = (step - schedule.start) as f64 / (schedule.end - schedule.start) as f64;
    schedule.w_start + t * (schedule.w_end - schedule.w_start)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub anneal: Option<AnnealSchedule>,
    pub seed: u64,
    pub init_scale: f64,
    /// Initial gate logit for every latent's background channel.
    pub gate_init: f64,
    pub latents: usize,
    pub log_every: usize,
    pub normalize_gradients: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: Objective::Beta(1.0),
            steps: 60_000,
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            anneal: None,
            seed: 0,
            init_scale: 0.1,
            gate_init: 1.0,
            latents: 30,
            log_every: 100,
            normalize_gradients: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::InvalidConfig(msg));
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("moment decay rates must lie in [0, 1)".into());
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive".into());
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return bad("init scale must be positive".into());
        }
        if !self.gate_init.is_finite() {
            return bad("gate init must be finite".into());
        }
        if self.latents == 0 || self.log_every == 0 {
            return bad("latents and log_every must be at least 1".into());
        }
        if let Some(a) = &self.anneal {
            if a.start > a.end || a.end > self.steps {
                return bad(format!(
                    "anneal range [{}, {}] must lie within [0, {}]",
                    a.start, a.end, self.steps
                ));
            }
            if !(a.w_start.is_finite() && a.w_end.is_finite() && a.w_start >= 0.0 && a.w_end >= 0.0) {
                return bad("anneal weights must be finite and non-negative".into());
            }
        }
        Ok(())
    }

    pub fn weight_at(&self, step: usize) -> f64 {
        self.anneal.as_ref().map_or(1.0, |a| anneal_weight(a, step))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("loss diverged at step {step} (loss = {loss})")]
    DivergedLoss { step: usize, loss: f64 },
    #[error("process has {bins} bins but parameters have {expected}")]
    Shape { bins: usize, expected: usize },
}

/// State at step `step`, measured before that step's update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub loss: f64,
    pub r: f64,
    pub d: f64,
    pub elbo: f64,
    pub anneal_w: f64,
}

#[derive(Debug, Clone)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
    pub params: ModelParams,
    pub report: BoundsReport,
    pub wall_time_secs: f64,
}

/// Wall time is excluded: two traces are equal when the run itself matched.
impl PartialEq for TrainTrace {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records && self.params == other.params && self.report == other.report
    }
}

impl TrainTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.step,
                num(r.loss),
                num(r.r),
                num(r.d),
                num(r.elbo),
                num(r.anneal_w)
            ));
        }
        out
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, cfg: &TrainConfig, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            theta[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

/// Trains from the seeded initialization.
pub fn train(cfg: &TrainConfig, tp: &ToyProcess) -> Result<TrainTrace, TrainError> {
    cfg.validate()?;
    let xvals = tp.bin_centers();
    let init = init_params(cfg.seed, cfg.init_scale, &xvals, cfg.latents, cfg.gate_init);
    train_from(cfg, tp, init)
}

/// Trains from explicit starting parameters.
pub fn train_from(
    cfg: &TrainConfig,
    tp: &ToyProcess,
    init: ModelParams,
) -> Result<TrainTrace, TrainError> {
    cfg.validate()?;
    if init.bins() != tp.bin_count() || !init.is_consistent() {
        return Err(TrainError::Shape { bins: tp.bin_count(), expected: init.bins() });
    }
    let started = Instant::now();
    let px = tp.px();
    let xvals = tp.bin_centers();
    let (k, n) = (init.latents(), init.bins());
    let mut theta = init.to_flat();
    let mut adam = Adam::new(theta.len());
    let mut records = Vec::with_capacity(cfg.steps / cfg.log_every + 1);

    for step in 0..cfg.steps {
        let w = cfg.weight_at(step);
        let params = ModelParams::from_flat(k, n, &theta);
        let ev = gradient(cfg.objective, w, &params, &px, &xvals).map_err(|e| match e {
            GradError::NonFiniteLoss(loss) => TrainError::DivergedLoss { step, loss },
        })?;
        if step % cfg.log_every == 0 || step + 1 == cfg.steps {
            records.push(TraceRecord {
                step,
                loss: ev.loss,
                r: ev.r,
                d: ev.d,
                elbo: -(ev.d + ev.r),
                anneal_w: w,
            });
        }
        let mut g = ev.grad.to_flat();
        if cfg.normalize_gradients {
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            g.iter_mut().for_each(|v| *v /= norm);
        }
        adam.step(cfg, &mut theta, &g);
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::DivergedLoss { step, loss: f64::NAN });
        }
    }

    let params = ModelParams::from_flat(k, n, &theta);
    let model = realize(&params, &xvals);
    let report = evaluate(&px, &model, None);
    if !(report.d.is_finite() && report.r.is_finite()) {
        return Err(TrainError::DivergedLoss { step: cfg.steps, loss: report.d + report.r });
    }
    Ok(TrainTrace {
        records,
        params,
        report,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

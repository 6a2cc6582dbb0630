//! Evaluation rollouts, delay sweeps and adjoint gradient checks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_system, Experiment, ExperimentConfig, ExperimentKind, Result};
use crate::closure::{forward, forward_base, ClosureKind};
use crate::integrate::{ConstantHistory, StepperSpec};
use crate::nn::ClosureFamily;
use crate::train::{avg_crosscorr, rmse_series, window_loss_grad, EpochRecord, SnapshotDataset, TrainError, Window};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowMetrics {
    pub window: String,
    /// Time-averaged loss misfit over the window's samples.
    pub l2: f64,
    pub mean_rmse: f64,
    pub crosscorr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRun {
    pub name: String,
    pub states: Vec<Vec<f64>>,
    pub rmse: Vec<f64>,
    pub windows: Vec<WindowMetrics>,
}

impl ModelRun {
    pub fn window(&self, name: &str) -> Option<&WindowMetrics> {
        self.windows.iter().find(|w| w.window == name)
    }
}

/// Continuous rollouts from `t = 0` across all periods.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub times: Vec<f64>,
    pub truth: Vec<Vec<f64>>,
    pub runs: Vec<ModelRun>,
}

impl Evaluation {
    pub fn run(&self, name: &str) -> Option<&ModelRun> {
        self.runs.iter().find(|r| r.name == name)
    }

    /// Period name of each sample time (a boundary goes to the later period).
    pub fn window_of(cfg: &ExperimentConfig, t: f64) -> &'static str {
        let eps = 1e-9 * cfg.spans.dt_data;
        cfg.spans.windows().into_iter().rev().find(|(_, w)| t >= w[0] - eps).map_or("train", |(n, _)| n)
    }
}

fn model_run(exp: &Experiment, name: &str, states: Vec<Vec<f64>>) -> Result<ModelRun> {
    let data = &exp.truth.data;
    let rmse = rmse_series(&states, data.states())?;
    let loss = exp.cfg.loss_spec();
    let mut windows = Vec::new();
    for (wname, [a, b]) in exp.cfg.spans.windows() {
        let r = data.indices_in(a, b);
        let (p, t) = (&states[r.clone()], &data.states()[r.clone()]);
        windows.push(WindowMetrics {
            window: wname.to_string(),
            l2: loss.misfit(p, t)?,
            mean_rmse: rmse[r.clone()].iter().sum::<f64>() / r.len().max(1) as f64,
            crosscorr: avg_crosscorr(p, t)?,
        });
    }
    Ok(ModelRun { name: name.to_string(), states, rmse, windows })
}

/// Rolls out the low-fidelity baseline, the closure model with `params`,
/// and (for the subgrid experiment) the Smagorinsky model from the truth at
/// `t = 0`, using a constant history before it.
pub fn evaluate(exp: &Experiment, params: &[f64]) -> Result<Evaluation> {
    let data = &exp.truth.data;
    let times = data.times().to_vec();
    let t_end = data.t_last();
    let u0 = data.state(0).to_vec();
    let stepper = &exp.cfg.steppers.forward;
    let sample = |traj: crate::integrate::DenseTrajectory| -> Result<Vec<Vec<f64>>> { Ok(traj.sample(&times)?) };

    let mut runs = vec![model_run(exp, "baseline", sample(forward_base(exp.truth.base.as_ref(), 0.0, &u0, t_end, stepper, &times)?)?)?];
    let fwd = forward(&exp.sys, params, &ConstantHistory(u0.clone()), 0.0, &u0, t_end, stepper, &times)?;
    runs.push(model_run(exp, "closure", fwd.states_at(&times)?)?);
    if let Some(smag) = &exp.truth.smagorinsky {
        runs.push(model_run(exp, "smagorinsky", sample(forward_base(smag.as_ref(), 0.0, &u0, t_end, stepper, &times)?)?)?);
    }
    Ok(Evaluation { times, truth: data.states().to_vec(), runs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "detail")]
pub enum RunStatus {
    Ok,
    Diverged(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub tau2: f64,
    pub repeat: usize,
    pub seed: u64,
    pub status: RunStatus,
    /// Validation loss averaged over the final (up to) 50 epochs.
    pub final_val_loss: Option<f64>,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Minimum, quartiles (linear interpolation between order statistics) and
/// maximum; `None` for an empty sample.
pub fn five_number_summary(values: &[f64]) -> Option<FiveNumber> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let x = p * (v.len() - 1) as f64;
        let (lo, hi) = (x.floor() as usize, x.ceil() as usize);
        v[lo] + (x - lo as f64) * (v[hi] - v[lo])
    };
    Some(FiveNumber { min: v[0], q1: q(0.25), median: q(0.5), q3: q(0.75), max: v[v.len() - 1] })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub runs: Vec<SweepRun>,
    /// `(τ₂, converged runs, summary of their final validation losses)`.
    pub summaries: Vec<(f64, usize, Option<FiveNumber>)>,
}

pub const SWEEP_TAIL_EPOCHS: usize = 50;

/// Trains a distributed closure with `τ₁ = 0` for every `(τ₂, repeat)`
/// pair; repeat `r` uses seed `cfg.seed + r`. Runs execute concurrently.
/// Diverged runs are kept with their status and left out of the summaries.
pub fn sweep_delay(exp: &Experiment, tau2s: &[f64], repeats: usize) -> Result<SweepReport> {
    let mut closures = Vec::new();
    for &tau2 in tau2s {
        let mut c = exp.cfg.closure.clone();
        c.kind = ClosureFamily::Distributed;
        c.tau1 = 0.0;
        c.tau2 = tau2;
        closures.push((tau2, exp.with_closure(c)?));
    }
    let jobs: Vec<(f64, usize, Experiment)> = closures
        .iter()
        .flat_map(|(tau2, e)| (0..repeats).map(move |r| (*tau2, r, e.with_seed(e.cfg.seed + r as u64))))
        .collect();
    let runs: Vec<Result<SweepRun>> = jobs
        .into_par_iter()
        .map(|(tau2, repeat, e)| {
            let mut state = e.initial_state();
            let seed = e.cfg.seed;
            match e.train(&mut state, |_, _| {}) {
                Ok(history) => {
                    let tail = &history[history.len().saturating_sub(SWEEP_TAIL_EPOCHS)..];
                    let avg = tail.iter().map(|r| r.val_loss).sum::<f64>() / tail.len() as f64;
                    Ok(SweepRun { tau2, repeat, seed, status: RunStatus::Ok, final_val_loss: Some(avg), history })
                }
                Err(super::ExperimentError::Train(
                    err @ (TrainError::NonFinite { .. } | TrainError::Closure(_) | TrainError::Integrate(_)),
                )) => Ok(SweepRun {
                    tau2,
                    repeat,
                    seed,
                    status: RunStatus::Diverged(err.to_string()),
                    final_val_loss: None,
                    history: Vec::new(),
                }),
                Err(e) => Err(e),
            }
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let summaries = tau2s
        .iter()
        .map(|&tau2| {
            let vals: Vec<f64> = runs.iter().filter(|r| r.tau2 == tau2).filter_map(|r| r.final_val_loss).collect();
            (tau2, vals.len(), five_number_summary(&vals))
        })
        .collect();
    Ok(SweepReport { runs, summaries })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub label: String,
    pub n_params: usize,
    /// `‖g_adjoint − g_fd‖ / ‖g_fd‖`
    pub rel_error: f64,
}

/// Adjoint versus central-difference gradients of a window loss on the toy
/// problem, for each closure kind.
pub fn verify_gradients(seed: u64) -> Result<Vec<GradientCheck>> {
    let cfg = ExperimentConfig::defaults(ExperimentKind::Toy, ClosureFamily::Discrete);
    let truth = super::generate(&cfg)?;
    let data: &SnapshotDataset = &truth.data;
    let mut tc = cfg.train_config();
    tc.forward = StepperSpec::dopri(1e-10, 1e-10);
    tc.adjoint = None;
    let window = Window { start: 20, targets: vec![30, 46, 60] };
    let kinds = [
        ("markovian", ClosureKind::Markovian),
        ("discrete 0.3", ClosureKind::Discrete { delays: vec![0.3] }),
        ("discrete 0.25;0.6", ClosureKind::Discrete { delays: vec![0.25, 0.6] }),
        ("distributed 0..0.5", ClosureKind::Distributed { tau1: 0.0, tau2: 0.5, quad_panels: 16 }),
        ("distributed 0.2..0.7", ClosureKind::Distributed { tau1: 0.2, tau2: 0.7, quad_panels: 16 }),
    ];
    kinds
        .into_par_iter()
        .map(|(label, kind)| {
            let sys = build_system(&cfg, truth.base.clone(), &kind)?;
            let p = sys.closure.init_params(seed, false);
            let (_, g) = window_loss_grad(&sys, &p, data, &window, &tc)?;
            let mut fd = Vec::with_capacity(p.len());
            let mut q = p.clone();
            let h = 1e-5;
            for i in 0..p.len() {
                q[i] = p[i] + h;
                let up = window_loss_grad(&sys, &q, data, &window, &tc)?.0;
                q[i] = p[i] - h;
                let dn = window_loss_grad(&sys, &q, data, &window, &tc)?.0;
                q[i] = p[i];
                fd.push((up - dn) / (2.0 * h));
            }
            let num: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt().max(1e-300);
            Ok(GradientCheck { label: label.to_string(), n_params: p.len(), rel_error: num / den })
        })
        .collect()
}

//! Training loop: random short windows from the truth data, adjoint gradients
//! per window, RMSprop updates, and per-epoch training/validation losses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::closure::{adjoint, forward, AugmentedSystem, ClosureError, Observation};
use crate::integrate::{ConstantHistory, History, IntegrateError, StepperSpec};

mod batch;
mod data;
mod loss;
mod metrics;
mod optim;

pub use batch::{admissible_starts, sample_batch, BatchSpec, Window};
pub use data::SnapshotDataset;
pub use loss::{loss_depth_avg_l2, loss_time_avg_l2, positivity_penalty, LossKind, LossSpec};
pub use metrics::{avg_crosscorr, rmse_series};
pub use optim::{iterations_per_epoch, lr_at, LrSchedule, RmspropState};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite {what} at epoch {epoch}")]
    NonFinite { epoch: usize, what: String },
    #[error(transparent)]
    Closure(#[from] ClosureError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// How per-window gradients are combined into one update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradReduction {
    #[default]
    Sum,
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: BatchSpec,
    /// Overrides the iterations-per-epoch formula.
    pub iterations_per_epoch: Option<usize>,
    pub schedule: LrSchedule,
    pub rho: f64,
    pub eps: f64,
    pub loss: LossSpec,
    pub reduction: GradReduction,
    pub train_span: (f64, f64),
    pub val_span: (f64, f64),
    pub forward: StepperSpec,
    /// Defaults to the forward stepper.
    pub adjoint: Option<StepperSpec>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.batch.validate()?;
        self.schedule.validate()?;
        self.loss.validate()?;
        self.forward.validate()?;
        if let Some(a) = &self.adjoint {
            a.validate()?;
        }
        if !(self.rho > 0.0 && self.rho < 1.0 && self.eps > 0.0) {
            return Err(TrainError::Config("RMSprop needs 0 < rho < 1 and eps > 0".into()));
        }
        let (a, b) = self.train_span;
        let (c, d) = self.val_span;
        if !(a < b && b <= c && c < d) {
            return Err(TrainError::Config(format!("spans must be ordered: train [{a}, {b}], validation [{c}, {d}]")));
        }
        if self.iterations_per_epoch == Some(0) {
            return Err(TrainError::Config("iterations per epoch must be positive".into()));
        }
        Ok(())
    }

    fn adjoint_stepper(&self) -> &StepperSpec {
        self.adjoint.as_ref().unwrap_or(&self.forward)
    }

    pub fn iterations(&self, data: &SnapshotDataset) -> usize {
        self.iterations_per_epoch.unwrap_or_else(|| {
            let n = data.indices_in(self.train_span.0, self.train_span.1).len().saturating_sub(1);
            iterations_per_epoch(n, self.batch.batch_size, self.batch.window_steps)
        })
    }
}

/// Everything needed to resume training exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub params: Vec<f64>,
    pub optimizer: RmspropState,
    /// Completed epochs.
    pub epoch: usize,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(params: Vec<f64>, cfg: &TrainConfig, seed: u64) -> Self {
        let mut optimizer = RmspropState::new(params.len(), cfg.schedule);
        optimizer.rho = cfg.rho;
        optimizer.eps = cfg.eps;
        Self { params, optimizer, epoch: 0, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Misfit of a rollout over the training span from its first snapshot.
    pub train_loss: f64,
    /// Misfit of a rollout over the validation span from the truth there.
    pub val_loss: f64,
    /// Mean window loss over the epoch's updates; `None` for epoch 0.
    pub batch_loss: Option<f64>,
    pub lr: f64,
}

/// Integrates the augmented system from `t0` and samples it at `times`.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    sys: &AugmentedSystem,
    params: &[f64],
    history: &dyn History,
    t0: f64,
    u0: &[f64],
    times: &[f64],
    stepper: &StepperSpec,
) -> Result<Vec<Vec<f64>>> {
    let t_end = times.iter().copied().fold(t0, f64::max);
    let run = forward(sys, params, history, t0, u0, t_end, stepper, times)?;
    Ok(run.states_at(times)?)
}

fn span_misfit(
    sys: &AugmentedSystem,
    params: &[f64],
    data: &SnapshotDataset,
    span: (f64, f64),
    truth_history: bool,
    cfg: &TrainConfig,
) -> Result<f64> {
    let r = data.indices_in(span.0, span.1);
    if r.len() < 2 {
        return Err(TrainError::Config(format!("span [{}, {}] holds fewer than two snapshots", span.0, span.1)));
    }
    let (t0, u0) = (data.time(r.start), data.state(r.start).to_vec());
    let times: Vec<f64> = data.times()[r.start + 1..r.end].to_vec();
    let pred = if truth_history {
        rollout(sys, params, data, t0, &u0, &times, &cfg.forward)?
    } else {
        rollout(sys, params, &ConstantHistory(u0.clone()), t0, &u0, &times, &cfg.forward)?
    };
    cfg.loss.misfit(&pred, &data.states()[r.start + 1..r.end])
}

/// Training-span misfit, starting from the first snapshot with a constant
/// history.
pub fn train_loss(sys: &AugmentedSystem, params: &[f64], data: &SnapshotDataset, cfg: &TrainConfig) -> Result<f64> {
    span_misfit(sys, params, data, cfg.train_span, false, cfg)
}

/// Validation-span misfit, starting from the truth at the span start with
/// the truth as history.
pub fn val_loss(sys: &AugmentedSystem, params: &[f64], data: &SnapshotDataset, cfg: &TrainConfig) -> Result<f64> {
    span_misfit(sys, params, data, cfg.val_span, true, cfg)
}

/// Loss and parameter gradient for one window.
pub fn window_loss_grad(
    sys: &AugmentedSystem,
    params: &[f64],
    data: &SnapshotDataset,
    window: &Window,
    cfg: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    let t0 = data.time(window.start);
    let times: Vec<f64> = window.targets.iter().map(|&i| data.time(i)).collect();
    let t_end = times.iter().copied().fold(t0, f64::max);
    let run = forward(sys, params, data, t0, data.state(window.start), t_end, &cfg.forward, &times)?;
    let pred = run.states_at(&times)?;
    let truth: Vec<Vec<f64>> = window.targets.iter().map(|&i| data.state(i).to_vec()).collect();
    let (value, grads) = cfg.loss.value_and_grad(&pred, &truth)?;
    let obs: Vec<Observation> = times.iter().zip(grads).map(|(&t, grad)| Observation { t, grad }).collect();
    let adj = adjoint(sys, params, data, &run, &obs, cfg.adjoint_stepper())?;
    Ok((value, adj.grad))
}

/// Summed (or averaged) loss and gradient over a batch of windows. Windows
/// are evaluated in parallel and reduced in order.
pub fn batch_loss_grad(
    sys: &AugmentedSystem,
    params: &[f64],
    data: &SnapshotDataset,
    windows: &[Window],
    cfg: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    let parts: Vec<Result<(f64, Vec<f64>)>> =
        windows.par_iter().map(|w| window_loss_grad(sys, params, data, w, cfg)).collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.len()];
    for part in parts {
        let (l, g) = part?;
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    let n = windows.len().max(1) as f64;
    if cfg.reduction == GradReduction::Mean {
        grad.iter_mut().for_each(|g| *g /= n);
    }
    Ok((loss / n, grad))
}

fn ensure_finite(v: f64, epoch: usize, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(TrainError::NonFinite { epoch, what: what.to_string() })
    }
}

fn check_inputs(sys: &AugmentedSystem, data: &SnapshotDataset, cfg: &TrainConfig, state: &TrainState) -> Result<()> {
    cfg.validate()?;
    if data.dim() != sys.state_dim() {
        return Err(TrainError::Shape(format!("data of dimension {} for a system of {}", data.dim(), sys.state_dim())));
    }
    if state.params.len() != sys.n_params() || state.optimizer.s.len() != sys.n_params() {
        return Err(TrainError::Shape(format!(
            "{} parameters for a closure with {}",
            state.params.len(),
            sys.n_params()
        )));
    }
    Ok(())
}

/// Runs epochs `state.epoch + 1 ..= cfg.epochs`, recording epoch 0 first
/// when starting fresh. `on_epoch` sees every record together with the
/// state after that epoch.
pub fn train(
    sys: &AugmentedSystem,
    data: &SnapshotDataset,
    cfg: &TrainConfig,
    state: &mut TrainState,
    mut on_epoch: impl FnMut(&EpochRecord, &TrainState),
) -> Result<Vec<EpochRecord>> {
    check_inputs(sys, data, cfg, state)?;
    let max_lag = sys.closure.kind.max_lag();
    admissible_starts(data, cfg.train_span, &cfg.batch, max_lag)?;
    let iters = cfg.iterations(data);
    let mut records = Vec::new();
    let mut record = |state: &TrainState, batch_loss: Option<f64>, records: &mut Vec<EpochRecord>| -> Result<()> {
        let e = state.epoch;
        let rec = EpochRecord {
            epoch: e,
            train_loss: ensure_finite(train_loss(sys, &state.params, data, cfg)?, e, "training loss")?,
            val_loss: ensure_finite(val_loss(sys, &state.params, data, cfg)?, e, "validation loss")?,
            batch_loss,
            lr: state.optimizer.lr(),
        };
        on_epoch(&rec, state);
        records.push(rec);
        Ok(())
    };
    if state.epoch == 0 {
        record(state, None, &mut records)?;
    }
    while state.epoch < cfg.epochs {
        let epoch = state.epoch + 1;
        let mut total = 0.0;
        for _ in 0..iters {
            let windows = sample_batch(data, cfg.train_span, &cfg.batch, max_lag, &mut state.rng)?;
            let (l, g) = batch_loss_grad(sys, &state.params, data, &windows, cfg)?;
            ensure_finite(l, epoch, "batch loss")?;
            if g.iter().any(|v| !v.is_finite()) {
                return Err(TrainError::NonFinite { epoch, what: "gradient".into() });
            }
            state.optimizer.step(&mut state.params, &g)?;
            total += l;
        }
        state.epoch = epoch;
        record(state, Some(total / iters as f64), &mut records)?;
    }
    Ok(records)
}

#[cfg(test)]
mod tests;

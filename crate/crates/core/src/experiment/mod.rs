//! The four reference experiments plus a small toy problem: configuration, truth
//! generation, training with checkpoints, evaluation, delay sweeps and
//! gradient verification.

use std::sync::Arc;

use thiserror::Error;

use crate::closure::{AugmentedSystem, ClosureError, ClosureKind, ClosureModel};
use crate::integrate::IntegrateError;
use crate::models::ModelError;
use crate::nn::{arch, Arch, ClosureFamily, NnError};
use crate::train::{TrainError, TrainState};

mod checkpoint;
mod config;
mod output;
mod run;
mod truth;

pub use checkpoint::Checkpoint;
pub use config::{
    ClosureConfig, ExperimentConfig, ExperimentKind, InitSection, OutputSection, RomSection, Spans, Steppers,
    SubgridSection, TrainSection,
};
pub use output::{
    state_labels, write_evaluation, write_loss_history, write_sweep, write_truth, write_trajectory_csv,
};
pub use run::{
    evaluate, five_number_summary, sweep_delay, verify_gradients, Evaluation, FiveNumber, GradientCheck, ModelRun,
    RunStatus, SweepReport, SweepRun, WindowMetrics,
};
pub use truth::{data_times, generate, pod_basis, sample_model, Truth};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Closure(#[from] ClosureError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

/// Closure networks of an experiment for a closure family.
pub fn architecture(kind: ExperimentKind, family: ClosureFamily) -> Arch {
    match kind {
        ExperimentKind::Toy => arch::toy(family),
        ExperimentKind::Exp1Rom => arch::exp1(family),
        ExperimentKind::Exp2Subgrid => arch::exp2(family),
        ExperimentKind::Exp3aBio0d => arch::exp3a(family),
        ExperimentKind::Exp3bBio1d => arch::exp3b(family),
    }
}

/// A configured experiment with its truth data and closure system.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub truth: Truth,
    pub sys: AugmentedSystem,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let truth = generate(&cfg)?;
        let sys = build_system(&cfg, truth.base.clone(), &cfg.closure.closure_kind())?;
        Ok(Self { cfg, truth, sys })
    }

    /// The same truth with a different closure.
    pub fn with_closure(&self, closure: ClosureConfig) -> Result<Self> {
        let mut cfg = self.cfg.clone();
        cfg.closure = closure;
        if cfg.closure.kind != self.cfg.closure.kind {
            let d = ExperimentConfig::defaults(cfg.experiment, cfg.closure.kind).train;
            cfg.train.batch_size = d.batch_size;
            cfg.train.decay_steps = d.decay_steps;
        }
        cfg.validate()?;
        let sys = build_system(&cfg, self.truth.base.clone(), &cfg.closure.closure_kind())?;
        Ok(Self { cfg, truth: self.truth.clone(), sys })
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut e = self.clone();
        e.cfg.seed = seed;
        e
    }

    /// Closure parameters before training.
    pub fn initial_params(&self) -> Vec<f64> {
        self.sys.closure.init_params(self.cfg.seed, self.cfg.closure.zero_init)
    }

    pub fn initial_state(&self) -> TrainState {
        TrainState::new(self.initial_params(), &self.cfg.train_config(), self.cfg.seed ^ 0x5eed_5eed)
    }

    /// Trains from `state` up to the configured epoch budget.
    pub fn train(
        &self,
        state: &mut TrainState,
        on_epoch: impl FnMut(&crate::train::EpochRecord, &TrainState),
    ) -> Result<Vec<crate::train::EpochRecord>> {
        Ok(crate::train::train(&self.sys, &self.truth.data, &self.cfg.train_config(), state, on_epoch)?)
    }

    pub fn checkpoint(&self, state: &TrainState, history: &[crate::train::EpochRecord]) -> Checkpoint {
        Checkpoint::new(self, state.clone(), history.to_vec())
    }
}

pub fn build_system(
    cfg: &ExperimentConfig,
    base: Arc<dyn crate::models::LowFidelityModel>,
    kind: &ClosureKind,
) -> Result<AugmentedSystem> {
    let a = architecture(cfg.experiment, kind.family());
    Ok(AugmentedSystem::new(base, ClosureModel { kind: kind.clone(), f: a.f, g: a.g })?)
}

//! Self-describing JSON checkpoints. Floats are written in shortest
//! round-trip form, so reloading reproduces every parameter bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Experiment, ExperimentError, ExperimentKind, Result};
use crate::closure::ClosureKind;
use crate::train::{EpochRecord, TrainState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub experiment: ExperimentKind,
    pub closure: ClosureKind,
    /// Layer layout of `f` and `g`.
    pub fingerprint: String,
    pub config_hash: String,
    pub n_theta: usize,
    pub n_phi: usize,
    pub state: TrainState,
    pub history: Vec<EpochRecord>,
}

pub(super) fn fingerprint(exp: &Experiment) -> String {
    let c = &exp.sys.closure;
    match &c.g {
        Some(g) => format!("f={};g={}", c.f.fingerprint(), g.fingerprint()),
        None => format!("f={}", c.f.fingerprint()),
    }
}

impl Checkpoint {
    pub fn new(exp: &Experiment, state: TrainState, history: Vec<EpochRecord>) -> Self {
        Self {
            experiment: exp.cfg.experiment,
            closure: exp.sys.closure.kind.clone(),
            fingerprint: fingerprint(exp),
            config_hash: exp.cfg.hash(),
            n_theta: exp.sys.closure.n_theta(),
            n_phi: exp.sys.closure.n_phi(),
            state,
            history,
        }
    }

    pub fn theta(&self) -> &[f64] {
        &self.state.params[..self.n_theta]
    }

    pub fn phi(&self) -> &[f64] {
        &self.state.params[self.n_theta..]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Parameters usable with `exp`'s closure; the architecture must match.
    pub fn params_for(&self, exp: &Experiment) -> Result<&[f64]> {
        if self.experiment != exp.cfg.experiment {
            return Err(ExperimentError::Checkpoint(format!(
                "checkpoint is for {}, configuration is {}",
                self.experiment.name(),
                exp.cfg.experiment.name()
            )));
        }
        if self.fingerprint != fingerprint(exp) || self.state.params.len() != exp.sys.n_params() {
            return Err(ExperimentError::Checkpoint("closure architecture differs from the configuration".into()));
        }
        Ok(&self.state.params)
    }

    /// Training state to continue from; everything except the epoch budget
    /// must match.
    pub fn resume_state(&self, exp: &Experiment) -> Result<TrainState> {
        self.params_for(exp)?;
        if self.config_hash != exp.cfg.hash() {
            return Err(ExperimentError::Checkpoint("configuration changed since the checkpoint was written".into()));
        }
        Ok(self.state.clone())
    }
}

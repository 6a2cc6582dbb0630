//! RMSprop with an exponentially decaying learning rate.

use serde::{Deserialize, Serialize};

use super::{Result, TrainError};

/// `lr0 · decay_rate^(step / decay_steps)`, with an integer exponent when
/// `staircase` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub lr0: f64,
    pub decay_rate: f64,
    pub decay_steps: usize,
    #[serde(default)]
    pub staircase: bool,
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(TrainError::Config("initial learning rate must be positive".into()));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(TrainError::Config("decay rate must lie in (0, 1]".into()));
        }
        if self.decay_steps == 0 {
            return Err(TrainError::Config("decay steps must be positive".into()));
        }
        Ok(())
    }
}

pub fn lr_at(step: u64, schedule: &LrSchedule) -> f64 {
    let mut e = step as f64 / schedule.decay_steps as f64;
    if schedule.staircase {
        e = e.floor();
    }
    schedule.lr0 * schedule.decay_rate.powf(e)
}

/// `⌈n_steps / (batch_size · window_steps)⌉ + 1`
pub fn iterations_per_epoch(n_steps: usize, batch_size: usize, window_steps: usize) -> usize {
    n_steps.div_ceil(batch_size.max(1) * window_steps.max(1)) + 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmspropState {
    pub s: Vec<f64>,
    pub rho: f64,
    pub eps: f64,
    pub schedule: LrSchedule,
    pub step: u64,
}

impl RmspropState {
    pub const DEFAULT_RHO: f64 = 0.9;
    pub const DEFAULT_EPS: f64 = 1e-7;

    pub fn new(n: usize, schedule: LrSchedule) -> Self {
        Self { s: vec![0.0; n], rho: Self::DEFAULT_RHO, eps: Self::DEFAULT_EPS, schedule, step: 0 }
    }

    pub fn lr(&self) -> f64 {
        lr_at(self.step, &self.schedule)
    }

    /// `s ← ρs + (1−ρ)g²`, `θ ← θ − lr·g/(√s + ε)`.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<()> {
        if theta.len() != self.s.len() || grad.len() != self.s.len() {
            return Err(TrainError::Shape(format!(
                "optimizer holds {} parameters, got {} and gradient {}",
                self.s.len(),
                theta.len(),
                grad.len()
            )));
        }
        let lr = self.lr();
        for ((p, s), &g) in theta.iter_mut().zip(&mut self.s).zip(grad) {
            *s = self.rho * *s + (1.0 - self.rho) * g * g;
            *p -= lr * g / (s.sqrt() + self.eps);
        }
        self.step += 1;
        Ok(())
    }
}

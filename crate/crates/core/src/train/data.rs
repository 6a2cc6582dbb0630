//! Uniformly sampled truth snapshots and their dense interpolant.

use super::{Result, TrainError};
use crate::integrate::History;

/// Truth states at uniformly spaced times.
///
/// Between samples the data are interpolated with cubic Hermite polynomials
/// whose slopes are finite differences of the samples (central inside,
/// one-sided at the ends). Before the first sample and after the last the
/// interpolant is held constant.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotDataset {
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    slopes: Vec<Vec<f64>>,
    dt: f64,
}

impl SnapshotDataset {
    pub fn new(times: Vec<f64>, states: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() != states.len() {
            return Err(TrainError::Shape(format!("{} times but {} states", times.len(), states.len())));
        }
        if times.len() < 2 {
            return Err(TrainError::Config("a dataset needs at least two snapshots".into()));
        }
        let dim = states[0].len();
        if dim == 0 || states.iter().any(|s| s.len() != dim) {
            return Err(TrainError::Shape("snapshots must share a nonzero dimension".into()));
        }
        if states.iter().flatten().any(|v| !v.is_finite()) || times.iter().any(|t| !t.is_finite()) {
            return Err(TrainError::Config("dataset contains non-finite values".into()));
        }
        let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
        if !(dt > 0.0) {
            return Err(TrainError::Config("snapshot times must be strictly increasing".into()));
        }
        let tol = 1e-12 * (1.0 + times[times.len() - 1].abs());
        for (i, w) in times.windows(2).enumerate() {
            if !(w[1] > w[0]) || ((w[1] - w[0]) - dt).abs() > tol {
                return Err(TrainError::Config(format!("snapshot spacing is not uniform at index {i}")));
            }
        }
        let m = times.len();
        let slopes = (0..m)
            .map(|i| {
                let (a, b, h) = match i {
                    0 => (0, 1, dt),
                    _ if i == m - 1 => (m - 2, m - 1, dt),
                    _ => (i - 1, i + 1, 2.0 * dt),
                };
                states[b].iter().zip(&states[a]).map(|(x, y)| (x - y) / h).collect()
            })
            .collect();
        Ok(Self { times, states, slopes, dt })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i]
    }

    pub fn t_first(&self) -> f64 {
        self.times[0]
    }

    pub fn t_last(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Index of the sample at `t`, if `t` is a sample time up to rounding.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let x = (t - self.times[0]) / self.dt;
        let i = x.round();
        if i < 0.0 || i as usize >= self.len() {
            return None;
        }
        let i = i as usize;
        ((self.times[i] - t).abs() <= 1e-9 * self.dt).then_some(i)
    }

    /// Indices of the samples in `[a, b]`.
    pub fn indices_in(&self, a: f64, b: f64) -> std::ops::Range<usize> {
        let eps = 1e-9 * self.dt;
        let lo = self.times.partition_point(|&t| t < a - eps);
        let hi = self.times.partition_point(|&t| t <= b + eps);
        lo..hi.max(lo)
    }

    /// Interpolated truth at `t`.
    pub fn interpolate(&self, t: f64, out: &mut [f64]) {
        let m = self.len();
        if t <= self.times[0] {
            out.copy_from_slice(&self.states[0]);
            return;
        }
        if t >= self.times[m - 1] {
            out.copy_from_slice(&self.states[m - 1]);
            return;
        }
        let i = (((t - self.times[0]) / self.dt).floor() as usize).min(m - 2);
        let h = self.times[i + 1] - self.times[i];
        let s = (t - self.times[i]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let (u0, u1) = (&self.states[i], &self.states[i + 1]);
        let (d0, d1) = (&self.slopes[i], &self.slopes[i + 1]);
        for k in 0..out.len() {
            out[k] = h00 * u0[k] + h * h10 * d0[k] + h01 * u1[k] + h * h11 * d1[k];
        }
    }

    /// Dataset restricted to the samples in `[a, b]`.
    pub fn slice(&self, a: f64, b: f64) -> Result<Self> {
        let r = self.indices_in(a, b);
        Self::new(self.times[r.clone()].to_vec(), self.states[r].to_vec())
    }
}

impl History for SnapshotDataset {
    fn dim(&self) -> usize {
        SnapshotDataset::dim(self)
    }

    fn eval(&self, t: f64, out: &mut [f64]) {
        self.interpolate(t, out)
    }
}

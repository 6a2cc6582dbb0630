//! Append-only dense output built from `(t, u, du/dt)` knots.
//!
//! Consecutive knots form cubic Hermite segments. Two knots sharing a time
//! encode a discontinuity (a state jump or a restart with a fresh derivative);
//! [`Side`] selects which one-sided limit a query returns there.

use super::IntegrateError;
use crate::linalg::hermite_eval_into;
use serde::{Deserialize, Serialize};

/// Which one-sided limit to use when a query lands on a discontinuity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Below,
    Above,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseTrajectory {
    dim: usize,
    ts: Vec<f64>,
    us: Vec<f64>,
    fs: Vec<f64>,
}

impl DenseTrajectory {
    pub fn new(dim: usize) -> Self {
        Self { dim, ts: Vec::new(), us: Vec::new(), fs: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ts.is_empty()
    }

    pub fn t_start(&self) -> f64 {
        self.ts.first().copied().unwrap_or(f64::NAN)
    }

    pub fn t_end(&self) -> f64 {
        self.ts.last().copied().unwrap_or(f64::NAN)
    }

    pub fn times(&self) -> &[f64] {
        &self.ts
    }

    pub fn knot_state(&self, i: usize) -> &[f64] {
        &self.us[i * self.dim..(i + 1) * self.dim]
    }

    pub fn knot_slope(&self, i: usize) -> &[f64] {
        &self.fs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last_state(&self) -> Option<&[f64]> {
        (!self.is_empty()).then(|| self.knot_state(self.len() - 1))
    }

    /// Appends a knot. Times must be nondecreasing.
    pub fn push(&mut self, t: f64, u: &[f64], f: &[f64]) -> Result<(), IntegrateError> {
        if u.len() != self.dim || f.len() != self.dim {
            return Err(IntegrateError::Dimension { expected: self.dim, got: u.len().max(f.len()) });
        }
        if let Some(&last) = self.ts.last() {
            if t < last {
                return Err(IntegrateError::NonMonotone { t, last });
            }
        }
        self.ts.push(t);
        self.us.extend_from_slice(u);
        self.fs.extend_from_slice(f);
        Ok(())
    }

    /// Slack allowed past either end before a query is rejected; absorbs
    /// rounding in breakpoint arithmetic such as `(t + tau) - tau`.
    fn slack(&self) -> f64 {
        1e-12 * (1.0 + self.t_start().abs().max(self.t_end().abs()))
    }

    pub fn query(&self, t: f64, side: Side) -> Result<Vec<f64>, IntegrateError> {
        let mut out = vec![0.0; self.dim];
        self.query_into(t, side, &mut out)?;
        Ok(out)
    }

    pub fn query_into(&self, t: f64, side: Side, out: &mut [f64]) -> Result<(), IntegrateError> {
        let n = self.ts.len();
        if n == 0 {
            return Err(IntegrateError::OutOfDomain { t, start: f64::NAN, end: f64::NAN });
        }
        let (t0, t1) = (self.ts[0], self.ts[n - 1]);
        let slack = self.slack();
        if !(t >= t0 - slack && t <= t1 + slack) {
            return Err(IntegrateError::OutOfDomain { t, start: t0, end: t1 });
        }
        let t = t.clamp(t0, t1);
        if n == 1 || t == t1 && side == Side::Above {
            out.copy_from_slice(self.knot_state(if t == t1 { n - 1 } else { 0 }));
            return Ok(());
        }
        let k = match side {
            // First knot at or after t: the segment ending there approaches t from below.
            Side::Below => {
                let j = self.ts.partition_point(|&x| x < t);
                if j == 0 {
                    out.copy_from_slice(self.knot_state(0));
                    return Ok(());
                }
                j
            }
            // Last knot at or before t starts the segment that leaves t upward.
            Side::Above => {
                let j = self.ts.partition_point(|&x| x <= t);
                if self.ts[j - 1] == t {
                    out.copy_from_slice(self.knot_state(j - 1));
                    return Ok(());
                }
                j
            }
        };
        if self.ts[k] == t {
            out.copy_from_slice(self.knot_state(k));
            return Ok(());
        }
        let a = k - 1;
        hermite_eval_into(
            self.ts[a],
            self.ts[k],
            self.knot_state(a),
            self.knot_state(k),
            self.knot_slope(a),
            self.knot_slope(k),
            t,
            out,
        );
        Ok(())
    }

    /// Samples the trajectory at the given times (right limits).
    pub fn sample(&self, times: &[f64]) -> Result<Vec<Vec<f64>>, IntegrateError> {
        times.iter().map(|&t| self.query(t, Side::Above)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stored_knots_are_exact() {
        let mut tr = DenseTrajectory::new(2);
        tr.push(0.0, &[1.0, 2.0], &[0.3, -0.1]).unwrap();
        tr.push(0.7, &[1.1, 1.7], &[0.2, 0.4]).unwrap();
        tr.push(1.3, &[0.9, 1.9], &[-0.5, 0.0]).unwrap();
        for i in 0..tr.len() {
            let t = tr.times()[i];
            assert_eq!(tr.query(t, Side::Below).unwrap(), tr.knot_state(i));
            assert_eq!(tr.query(t, Side::Above).unwrap(), tr.knot_state(i));
        }
    }

    #[test]
    fn jumps_resolve_by_side() {
        let mut tr = DenseTrajectory::new(1);
        tr.push(0.0, &[0.0], &[1.0]).unwrap();
        tr.push(1.0, &[1.0], &[1.0]).unwrap();
        tr.push(1.0, &[5.0], &[0.0]).unwrap();
        tr.push(2.0, &[5.0], &[0.0]).unwrap();
        assert_eq!(tr.query(1.0, Side::Below).unwrap(), vec![1.0]);
        assert_eq!(tr.query(1.0, Side::Above).unwrap(), vec![5.0]);
        assert!((tr.query(0.5, Side::Above).unwrap()[0] - 0.5).abs() < 1e-15);
        assert_eq!(tr.query(1.5, Side::Below).unwrap(), vec![5.0]);
    }

    #[test]
    fn rejects_out_of_domain_and_backwards_pushes() {
        let mut tr = DenseTrajectory::new(1);
        tr.push(0.0, &[0.0], &[0.0]).unwrap();
        tr.push(1.0, &[0.0], &[0.0]).unwrap();
        assert!(matches!(tr.query(1.5, Side::Above), Err(IntegrateError::OutOfDomain { .. })));
        assert!(matches!(tr.push(0.5, &[0.0], &[0.0]), Err(IntegrateError::NonMonotone { .. })));
    }
}

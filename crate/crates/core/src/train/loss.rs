//! Trajectory losses and their gradients with respect to predicted states.

use serde::{Deserialize, Serialize};

use super::{Result, TrainError};

/// How residuals at one time are reduced to a scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LossKind {
    /// Euclidean norm of the whole residual.
    TimeAvgL2,
    /// Norm over each point's `channels` consecutive entries, averaged over points.
    DepthAvgL2 { channels: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub kind: LossKind,
    #[serde(default)]
    pub positivity_weight: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self { kind: LossKind::TimeAvgL2, positivity_weight: 0.0 }
    }
}

fn check_shapes(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(TrainError::Shape(format!("{} predictions for {} targets", pred.len(), truth.len())));
    }
    for (i, (p, t)) in pred.iter().zip(truth).enumerate() {
        if p.len() != t.len() {
            return Err(TrainError::Shape(format!("prediction {i} has {} entries, target {}", p.len(), t.len())));
        }
    }
    Ok(())
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// `(1/M) Σ_i ‖pred_i − truth_i‖₂`
pub fn loss_time_avg_l2(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    check_shapes(pred, truth)?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = pred.iter().zip(truth).map(|(p, t)| norm(p.iter().zip(t).map(|(a, b)| a - b))).sum();
    Ok(total / pred.len() as f64)
}

/// Per-point norms over groups of `channels` entries, averaged over points,
/// then over times.
pub fn loss_depth_avg_l2(pred: &[Vec<f64>], truth: &[Vec<f64>], channels: usize) -> Result<f64> {
    check_shapes(pred, truth)?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        total += depth_avg_one(p, t, channels)?.0;
    }
    Ok(total / pred.len() as f64)
}

fn depth_avg_one(p: &[f64], t: &[f64], channels: usize) -> Result<(f64, usize)> {
    if channels == 0 || p.len() % channels != 0 {
        return Err(TrainError::Shape(format!("{} entries do not split into groups of {channels}", p.len())));
    }
    let pts = p.len() / channels;
    let s: f64 = p
        .chunks(channels)
        .zip(t.chunks(channels))
        .map(|(a, b)| norm(a.iter().zip(b).map(|(x, y)| x - y)))
        .sum();
    Ok((s / pts as f64, pts))
}

/// `weight · mean(max(0, −x)²)` over every entry of every state.
pub fn positivity_penalty(pred: &[Vec<f64>], weight: f64) -> f64 {
    let count: usize = pred.iter().map(Vec::len).sum();
    if weight == 0.0 || count == 0 {
        return 0.0;
    }
    let s: f64 = pred.iter().flatten().map(|&x| if x < 0.0 { x * x } else { 0.0 }).sum();
    weight * s / count as f64
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.positivity_weight >= 0.0 && self.positivity_weight.is_finite()) {
            return Err(TrainError::Config("positivity weight must be non-negative".into()));
        }
        if let LossKind::DepthAvgL2 { channels: 0 } = self.kind {
            return Err(TrainError::Config("depth-averaged loss needs at least one channel".into()));
        }
        Ok(())
    }

    /// Data-misfit term only.
    pub fn misfit(&self, pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
        match self.kind {
            LossKind::TimeAvgL2 => loss_time_avg_l2(pred, truth),
            LossKind::DepthAvgL2 { channels } => loss_depth_avg_l2(pred, truth, channels),
        }
    }

    /// Total loss (misfit plus positivity penalty) and its gradient with
    /// respect to each predicted state. Zero residuals contribute a zero
    /// gradient.
    pub fn value_and_grad(&self, pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
        check_shapes(pred, truth)?;
        let m = pred.len();
        if m == 0 {
            return Ok((0.0, Vec::new()));
        }
        let inv_m = 1.0 / m as f64;
        let mut value = 0.0;
        let mut grads = Vec::with_capacity(m);
        for (p, t) in pred.iter().zip(truth) {
            let r: Vec<f64> = p.iter().zip(t).map(|(a, b)| a - b).collect();
            let mut g = vec![0.0; r.len()];
            match self.kind {
                LossKind::TimeAvgL2 => {
                    let nr = norm(r.iter().copied());
                    value += nr * inv_m;
                    if nr > 0.0 {
                        g.iter_mut().zip(&r).for_each(|(gi, ri)| *gi = ri * inv_m / nr);
                    }
                }
                LossKind::DepthAvgL2 { channels } => {
                    let (v, pts) = depth_avg_one(p, t, channels)?;
                    value += v * inv_m;
                    let scale = inv_m / pts as f64;
                    for (gc, rc) in g.chunks_mut(channels).zip(r.chunks(channels)) {
                        let nr = norm(rc.iter().copied());
                        if nr > 0.0 {
                            gc.iter_mut().zip(rc).for_each(|(gi, ri)| *gi = ri * scale / nr);
                        }
                    }
                }
            }
            grads.push(g);
        }
        if self.positivity_weight > 0.0 {
            value += positivity_penalty(pred, self.positivity_weight);
            let count: usize = pred.iter().map(Vec::len).sum();
            let c = 2.0 * self.positivity_weight / count as f64;
            for (g, p) in grads.iter_mut().zip(pred) {
                g.iter_mut().zip(p).filter(|(_, &x)| x < 0.0).for_each(|(gi, &x)| *gi += c * x);
            }
        }
        Ok((value, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::collection::vec as pvec;
    use proptest::prelude::*;

    #[test]
    fn time_average_of_single_residual() {
        assert_eq!(loss_time_avg_l2(&[vec![3.0, 4.0]], &[vec![0.0, 0.0]]).unwrap(), 5.0);
        assert_eq!(loss_time_avg_l2(&[vec![1.0, 2.0]], &[vec![1.0, 2.0]]).unwrap(), 0.0);
    }

    #[test]
    fn depth_average_groups_channels() {
        let pred = vec![vec![3.0, 4.0, 0.0, 0.0, 0.0, 1.0]];
        let truth = vec![vec![0.0; 6]];
        assert!((loss_depth_avg_l2(&pred, &truth, 3).unwrap() - 3.0).abs() < 1e-15);
        assert!(loss_depth_avg_l2(&pred, &truth, 4).is_err());
    }

    #[test]
    fn penalty_examples() {
        assert_eq!(positivity_penalty(&[vec![-2.0]], 1.0), 4.0);
        assert_eq!(positivity_penalty(&[vec![1.0, 0.0]], 1.0), 0.0);
        assert_eq!(positivity_penalty(&[vec![-2.0]], 0.0), 0.0);
    }

    #[test]
    fn mismatched_shapes_are_errors() {
        assert!(loss_time_avg_l2(&[vec![1.0]], &[]).is_err());
        assert!(loss_time_avg_l2(&[vec![1.0]], &[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn zero_residual_has_zero_gradient() {
        let spec = LossSpec { kind: LossKind::DepthAvgL2 { channels: 2 }, positivity_weight: 0.0 };
        let (v, g) = spec.value_and_grad(&[vec![1.0, 2.0, 3.0, 4.0]], &[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        assert_eq!(v, 0.0);
        assert!(g[0].iter().all(|&x| x == 0.0));
    }

    fn states(m: usize, n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        pvec(pvec(-3.0f64..3.0, n), m)
    }

    fn fd_check(spec: LossSpec, pred: &[Vec<f64>], truth: &[Vec<f64>]) -> f64 {
        let (_, g) = spec.value_and_grad(pred, truth).unwrap();
        let mut worst = 0.0f64;
        let h = 1e-6;
        for i in 0..pred.len() {
            for k in 0..pred[i].len() {
                let mut p = pred.to_vec();
                p[i][k] += h;
                let up = spec.value_and_grad(&p, truth).unwrap().0;
                p[i][k] -= 2.0 * h;
                let dn = spec.value_and_grad(&p, truth).unwrap().0;
                worst = worst.max(((up - dn) / (2.0 * h) - g[i][k]).abs());
            }
        }
        worst
    }

    proptest! {
        #[test]
        fn loss_is_homogeneous(p in states(3, 4), t in states(3, 4)) {
            let doubled: Vec<Vec<f64>> = p.iter().zip(&t).map(|(a, b)| a.iter().zip(b).map(|(x, y)| y + 2.0 * (x - y)).collect()).collect();
            let l1 = loss_time_avg_l2(&p, &t).unwrap();
            let l2 = loss_time_avg_l2(&doubled, &t).unwrap();
            prop_assert!((l2 - 2.0 * l1).abs() <= 1e-12 * (1.0 + l1));
        }

        #[test]
        fn gradients_match_finite_differences(p in states(3, 6), t in states(3, 6), w in 0.0f64..2.0, depth in any::<bool>()) {
            let kind = if depth { LossKind::DepthAvgL2 { channels: 3 } } else { LossKind::TimeAvgL2 };
            prop_assume!(p.iter().flatten().all(|x| x.abs() > 1e-3));
            let spec = LossSpec { kind, positivity_weight: w };
            prop_assert!(fd_check(spec, &p, &t) < 1e-5);
        }

        #[test]
        fn penalty_is_nonnegative(p in states(2, 5), w in 0.0f64..5.0) {
            prop_assert!(positivity_penalty(&p, w) >= 0.0);
        }
    }
}

//! Error measures on aligned trajectories.

use super::{Result, TrainError};

fn aligned(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<()> {
    if pred.len() != truth.len() || pred.iter().zip(truth).any(|(p, t)| p.len() != t.len()) {
        return Err(TrainError::Shape("prediction and truth series are not aligned".into()));
    }
    Ok(())
}

/// `RMSE(t) = sqrt(mean over components of (pred − truth)²)` at each sample.
pub fn rmse_series(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<Vec<f64>> {
    aligned(pred, truth)?;
    Ok(pred
        .iter()
        .zip(truth)
        .map(|(p, t)| {
            let n = p.len().max(1) as f64;
            (p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).sqrt()
        })
        .collect())
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Zero-lag Pearson correlation of each component over the series, averaged
/// over components. `None` when any component has zero variance in either
/// series or the series has fewer than two samples.
pub fn avg_crosscorr(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<Option<f64>> {
    aligned(pred, truth)?;
    if pred.len() < 2 || pred[0].is_empty() {
        return Ok(None);
    }
    let n = pred[0].len();
    if pred.iter().any(|p| p.len() != n) {
        return Err(TrainError::Shape("series changes dimension over time".into()));
    }
    let mut total = 0.0;
    for k in 0..n {
        let x: Vec<f64> = pred.iter().map(|p| p[k]).collect();
        let y: Vec<f64> = truth.iter().map(|t| t[k]).collect();
        match pearson(&x, &y) {
            Some(r) => total += r,
            None => return Ok(None),
        }
    }
    Ok(Some(total / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::collection::vec as pvec;
    use proptest::prelude::*;

    #[test]
    fn rmse_of_known_residuals() {
        let r = rmse_series(&[vec![1.0, 1.0], vec![3.0, 0.0]], &[vec![0.0, 0.0], vec![0.0, 4.0]]).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-15);
        assert!((r[1] - 12.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn identical_and_flipped_series() {
        let a: Vec<Vec<f64>> = (0..20).map(|i| vec![(i as f64).sin(), i as f64]).collect();
        assert!((avg_crosscorr(&a, &a).unwrap().unwrap() - 1.0).abs() < 1e-12);
        let b: Vec<Vec<f64>> = a.iter().map(|v| vec![-v[0], 3.0 - 2.0 * v[1]]).collect();
        assert!((avg_crosscorr(&a, &b).unwrap().unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_series_has_no_correlation() {
        let a = vec![vec![1.0]; 5];
        let b: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        assert_eq!(avg_crosscorr(&a, &b).unwrap(), None);
        assert!(rmse_series(&a, &b[..3]).is_err());
    }

    proptest! {
        #[test]
        fn correlation_is_bounded(x in pvec(pvec(-5.0f64..5.0, 2), 3..30), y in pvec(pvec(-5.0f64..5.0, 2), 30)) {
            let y = &y[..x.len()];
            if let Some(r) = avg_crosscorr(&x, y).unwrap() {
                prop_assert!(r.abs() <= 1.0 + 1e-12);
            }
        }
    }
}

//! Random short training windows.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Result, SnapshotDataset, TrainError};

/// Window length and supervision stride, in data steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSpec {
    pub batch_size: usize,
    #[serde(default = "default_window")]
    pub window_steps: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_window() -> usize {
    6
}
fn default_stride() -> usize {
    2
}

impl BatchSpec {
    pub fn new(batch_size: usize) -> Self {
        Self { batch_size, window_steps: default_window(), stride: default_stride() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.window_steps == 0 || self.stride == 0 {
            return Err(TrainError::Config("batch size, window and stride must be positive".into()));
        }
        if self.window_steps % self.stride != 0 {
            return Err(TrainError::Config("window length must be a multiple of the stride".into()));
        }
        Ok(())
    }
}

/// One training window: start at data index `start`, supervised at `targets`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
    pub targets: Vec<usize>,
}

/// Data indices that can start a window: the window stays inside
/// `[t_a, t_b]` and the delayed history back to `max_lag` lies on data.
pub fn admissible_starts(
    data: &SnapshotDataset,
    span: (f64, f64),
    spec: &BatchSpec,
    max_lag: f64,
) -> Result<std::ops::Range<usize>> {
    spec.validate()?;
    let r = data.indices_in(span.0, span.1);
    let eps = 1e-9 * data.dt();
    let lo = r.start.max(data.times().partition_point(|&t| t - max_lag < data.t_first() - eps));
    if r.end < spec.window_steps + 1 || lo + spec.window_steps >= r.end {
        return Err(TrainError::Config(format!(
            "training span [{}, {}] is too short for windows of {} steps with history {max_lag}",
            span.0, span.1, spec.window_steps
        )));
    }
    Ok(lo..r.end - spec.window_steps)
}

/// Draws `batch_size` windows with starts uniform over the admissible range.
pub fn sample_batch<R: Rng + ?Sized>(
    data: &SnapshotDataset,
    span: (f64, f64),
    spec: &BatchSpec,
    max_lag: f64,
    rng: &mut R,
) -> Result<Vec<Window>> {
    let starts = admissible_starts(data, span, spec, max_lag)?;
    Ok((0..spec.batch_size)
        .map(|_| {
            let start = rng.gen_range(starts.clone());
            let targets = (1..=spec.window_steps / spec.stride).map(|k| start + k * spec.stride).collect();
            Window { start, targets }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn data(n: usize) -> SnapshotDataset {
        let times: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
        let states = times.iter().map(|&t| vec![t]).collect();
        SnapshotDataset::new(times, states).unwrap()
    }

    #[test]
    fn single_admissible_start_is_deterministic() {
        let d = data(7);
        let spec = BatchSpec::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = sample_batch(&d, (0.0, 0.06), &spec, 0.0, &mut rng).unwrap();
        assert!(b.iter().all(|w| *w == Window { start: 0, targets: vec![2, 4, 6] }));
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let d = data(201);
        let spec = BatchSpec::new(4);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_batch(&d, (0.0, 2.0), &spec, 0.15, &mut rng).unwrap()
        };
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }

    #[test]
    fn short_spans_are_rejected() {
        let d = data(7);
        assert!(sample_batch(&d, (0.0, 0.05), &BatchSpec::new(1), 0.0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        assert!(sample_batch(&d, (0.0, 0.06), &BatchSpec::new(1), 0.01, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn windows_stay_inside_span(seed in any::<u64>(), lag_steps in 0usize..40, a in 0usize..50) {
            let d = data(301);
            let span = (a as f64 * 0.01, 2.5);
            let max_lag = lag_steps as f64 * 0.01;
            let spec = BatchSpec::new(1000);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for w in sample_batch(&d, span, &spec, max_lag, &mut rng).unwrap() {
                prop_assert!(d.time(w.start) >= span.0 - 1e-12);
                prop_assert!(d.time(*w.targets.last().unwrap()) <= span.1 + 1e-12);
                prop_assert!(d.time(w.start) - max_lag >= d.t_first() - 1e-12);
                prop_assert_eq!(w.targets.len(), 3);
            }
        }
    }
}

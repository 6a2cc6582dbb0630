//! Truth and low-fidelity model pairs: Burgers FOM and its POD-Galerkin ROM,
//! coarse Burgers with a Smagorinsky baseline, 0-D NPZ/NNPZD biology, and the
//! 1-D biogeochemical column.

pub mod bio;
pub mod burgers;
pub mod column;
pub mod pod;

use crate::nn::EvalContext;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("snapshots carry no energy after mean removal")]
    ZeroEnergy,
    #[error(transparent)]
    Linalg(#[from] crate::linalg::LinalgError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// The known-physics part of an augmented system.
pub trait LowFidelityModel: Send + Sync {
    fn dim(&self) -> usize;

    /// Channels-last tensor shape of the state as seen by the closure.
    fn shape(&self) -> (usize, usize) {
        (1, self.dim())
    }

    fn rhs(&self, t: f64, u: &[f64], out: &mut [f64]);

    /// `out = (∂rhs/∂u)ᵀ w`. The default uses central differences.
    fn vjp(&self, t: f64, u: &[f64], w: &[f64], out: &mut [f64]) {
        let n = self.dim();
        let mut up = u.to_vec();
        let (mut fp, mut fm) = (vec![0.0; n], vec![0.0; n]);
        for j in 0..n {
            let h = 1e-6 * u[j].abs().max(1.0);
            up[j] = u[j] + h;
            self.rhs(t, &up, &mut fp);
            up[j] = u[j] - h;
            self.rhs(t, &up, &mut fm);
            up[j] = u[j];
            out[j] = (0..n).map(|i| w[i] * (fp[i] - fm[i])).sum::<f64>() / (2.0 * h);
        }
    }

    /// Extra per-point inputs for closures that read them.
    fn context(&self, _t: f64) -> Option<EvalContext> {
        None
    }

    /// Multiplies the closure output componentwise (e.g. to keep Dirichlet
    /// boundary values fixed).
    fn closure_mask(&self) -> Option<&[f64]> {
        None
    }
}

/// `u' = A u`, the base of the small gradient-check systems.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub a: crate::linalg::Mat,
}

impl LinearModel {
    /// Lightly damped rotation in the plane.
    pub fn toy() -> Self {
        let a = crate::linalg::Mat::from_rows(&[vec![-0.1, 1.0], vec![-1.0, -0.1]]).expect("2x2");
        Self { a }
    }
}

impl LowFidelityModel for LinearModel {
    fn dim(&self) -> usize {
        self.a.rows()
    }

    fn rhs(&self, _t: f64, u: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = crate::linalg::dot(self.a.row(i), u);
        }
    }

    fn vjp(&self, _t: f64, _u: &[f64], w: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (i, &wi) in w.iter().enumerate() {
            crate::linalg::axpy(wi, self.a.row(i), out);
        }
    }
}

#[cfg(test)]
pub(crate) fn check_vjp(model: &dyn LowFidelityModel, t: f64, u: &[f64], w: &[f64]) -> f64 {
    struct Fd<'a>(&'a dyn LowFidelityModel);
    impl LowFidelityModel for Fd<'_> {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn rhs(&self, t: f64, u: &[f64], out: &mut [f64]) {
            self.0.rhs(t, u, out)
        }
    }
    let n = model.dim();
    let (mut a, mut b) = (vec![0.0; n], vec![0.0; n]);
    model.vjp(t, u, w, &mut a);
    Fd(model).vjp(t, u, w, &mut b);
    let d: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let s: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / s.max(1e-12)
}

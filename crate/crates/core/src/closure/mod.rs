//! Low-fidelity models augmented with neural closures, their forward solves,
//! and gradients by explicit adjoints.
//!
//! A discrete closure sees the state at fixed lags,
//! `du/dt = R(u) + f([u(t − τ_K), …, u(t − τ_1), u(t)]; θ)`. A distributed
//! closure sees a memory channel `y(t) = ∫_{t−τ2}^{t−τ1} g(u(s); φ) ds`, carried
//! as extra state with `dy/dt = g(u(t − τ1)) − g(u(t − τ2))`.

mod adjoint;
mod reference;

pub use adjoint::{adjoint, AdjointRun, Observation};
pub use reference::{fd_gradient, markovian_reference_gradient};

use crate::integrate::{
    propagated_breakpoints, trapezoid_nodes, DdeRhs, DenseTrajectory, History, IntegrateError, Past, Side, Solver,
    StepperSpec,
};
use crate::models::LowFidelityModel;
use crate::nn::{EvalContext, Network, NnError};
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClosureError {
    #[error("invalid closure: {0}")]
    Config(String),
    #[error("parameter vector has {got} entries, closure needs {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
}

pub type Result<T> = std::result::Result<T, ClosureError>;

pub(crate) fn nn_to_integrate(e: NnError) -> IntegrateError {
    IntegrateError::Rhs(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClosureKind {
    Markovian,
    /// Strictly increasing positive lags `τ_1 < … < τ_K`.
    Discrete { delays: Vec<f64> },
    /// Memory window `[t − τ2, t − τ1]`; `quad_panels` trapezoid panels set the
    /// initial memory value from the history.
    Distributed {
        tau1: f64,
        tau2: f64,
        #[serde(default = "default_panels")]
        quad_panels: usize,
    },
}

fn default_panels() -> usize {
    16
}

impl ClosureKind {
    pub fn family(&self) -> crate::nn::ClosureFamily {
        match self {
            ClosureKind::Markovian => crate::nn::ClosureFamily::Markovian,
            ClosureKind::Discrete { .. } => crate::nn::ClosureFamily::Discrete,
            ClosureKind::Distributed { .. } => crate::nn::ClosureFamily::Distributed,
        }
    }

    /// Positive lags read from the past.
    pub fn lags(&self) -> Vec<f64> {
        match self {
            ClosureKind::Markovian => Vec::new(),
            ClosureKind::Discrete { delays } => delays.clone(),
            ClosureKind::Distributed { tau1, tau2, .. } => {
                [*tau1, *tau2].into_iter().filter(|&t| t > 0.0).collect()
            }
        }
    }

    pub fn max_lag(&self) -> f64 {
        self.lags().into_iter().fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ClosureKind::Markovian => Ok(()),
            ClosureKind::Discrete { delays } => {
                if delays.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
                    return Err(ClosureError::Config("delays must be positive and finite".into()));
                }
                if delays.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(ClosureError::Config("delays must be strictly increasing".into()));
                }
                Ok(())
            }
            ClosureKind::Distributed { tau1, tau2, quad_panels } => {
                if !(tau1.is_finite() && tau2.is_finite() && 0.0 <= *tau1 && tau1 <= tau2) {
                    return Err(ClosureError::Config(format!("need 0 <= tau1 <= tau2, got ({tau1}, {tau2})")));
                }
                if *quad_panels == 0 {
                    return Err(ClosureError::Config("quad_panels must be positive".into()));
                }
                Ok(())
            }
        }
    }
}

/// Closure networks together with how they read the state history.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosureModel {
    pub kind: ClosureKind,
    pub f: Network,
    pub g: Option<Network>,
}

impl ClosureModel {
    pub fn n_theta(&self) -> usize {
        self.f.n_params()
    }

    pub fn n_phi(&self) -> usize {
        self.g.as_ref().map_or(0, Network::n_params)
    }

    pub fn n_params(&self) -> usize {
        self.n_theta() + self.n_phi()
    }

    /// Channels of the memory state per grid point.
    pub fn aux_channels(&self) -> usize {
        self.g.as_ref().map_or(0, |g| g.output_shape().1)
    }

    pub fn split<'p>(&self, params: &'p [f64]) -> (&'p [f64], &'p [f64]) {
        params.split_at(self.n_theta())
    }

    /// Parameters with the closure output layer zeroed, so the closure starts at 0.
    pub fn init_params(&self, seed: u64, zero_last: bool) -> Vec<f64> {
        let mut p = self.f.init_params(seed, zero_last);
        if let Some(g) = &self.g {
            p.extend(g.init_params(seed.wrapping_add(0x9e37_79b9), false));
        }
        p
    }
}

/// A low-fidelity model plus a closure, `du/dt = R(u) + mask ⊙ closure`.
#[derive(Clone)]
pub struct AugmentedSystem {
    pub base: Arc<dyn LowFidelityModel>,
    pub closure: ClosureModel,
}

impl std::fmt::Debug for AugmentedSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AugmentedSystem").field("dim", &self.base.dim()).field("closure", &self.closure).finish()
    }
}

impl AugmentedSystem {
    pub fn new(base: Arc<dyn LowFidelityModel>, closure: ClosureModel) -> Result<Self> {
        closure.kind.validate()?;
        let (len, ch) = base.shape();
        if len * ch != base.dim() {
            return Err(ClosureError::Config(format!("model shape {len}x{ch} does not cover dim {}", base.dim())));
        }
        if closure.f.output_shape() != (len, ch) {
            return Err(ClosureError::Config(format!(
                "closure output {:?} does not match state shape {:?}",
                closure.f.output_shape(),
                (len, ch)
            )));
        }
        match (&closure.kind, &closure.g) {
            (ClosureKind::Distributed { .. }, Some(g)) => {
                if g.input_shape() != (len, ch) {
                    return Err(ClosureError::Config(format!(
                        "memory network input {:?} does not match state shape {:?}",
                        g.input_shape(),
                        (len, ch)
                    )));
                }
                let (gl, gc) = g.output_shape();
                if gl != len || closure.f.input_shape() != (len, ch + gc) {
                    return Err(ClosureError::Config(format!(
                        "closure input {:?} must be the state plus {gc} memory channels",
                        closure.f.input_shape()
                    )));
                }
            }
            (ClosureKind::Distributed { .. }, None) => {
                return Err(ClosureError::Config("distributed closure needs a memory network".into()))
            }
            (_, Some(_)) => return Err(ClosureError::Config("only distributed closures take a memory network".into())),
            (kind, None) => {
                if closure.f.input_shape() != (len, ch) {
                    return Err(ClosureError::Config(format!(
                        "closure input {:?} does not match state shape {:?}",
                        closure.f.input_shape(),
                        (len, ch)
                    )));
                }
                if matches!(kind, ClosureKind::Discrete { delays } if !delays.is_empty()) && !closure.f.is_recurrent() {
                    return Err(ClosureError::Config("delayed inputs need a recurrent closure".into()));
                }
            }
        }
        Ok(Self { base, closure })
    }

    pub fn state_dim(&self) -> usize {
        self.base.dim()
    }

    pub fn aux_dim(&self) -> usize {
        self.base.shape().0 * self.closure.aux_channels()
    }

    /// Dimension of the integrated state `[u; y]`.
    pub fn total_dim(&self) -> usize {
        self.state_dim() + self.aux_dim()
    }

    pub fn n_params(&self) -> usize {
        self.closure.n_params()
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(ClosureError::ParamLength { expected: self.n_params(), got: params.len() });
        }
        Ok(())
    }

    /// Interleaves state and memory channels point by point.
    pub(crate) fn join(&self, u: &[f64], y: &[f64]) -> Vec<f64> {
        let (len, cu) = self.base.shape();
        let cy = self.closure.aux_channels();
        let mut out = Vec::with_capacity(len * (cu + cy));
        for p in 0..len {
            out.extend_from_slice(&u[p * cu..(p + 1) * cu]);
            out.extend_from_slice(&y[p * cy..(p + 1) * cy]);
        }
        out
    }

    /// Inverse of [`join`](Self::join), accumulating into `gu` and `gy`.
    pub(crate) fn split_add(&self, v: &[f64], gu: &mut [f64], gy: &mut [f64]) {
        let (len, cu) = self.base.shape();
        let cy = self.closure.aux_channels();
        for p in 0..len {
            let row = &v[p * (cu + cy)..(p + 1) * (cu + cy)];
            for c in 0..cu {
                gu[p * cu + c] += row[c];
            }
            for c in 0..cy {
                gy[p * cy + c] += row[cu + c];
            }
        }
    }

    pub(crate) fn apply_mask(&self, v: &mut [f64]) {
        if let Some(m) = self.base.closure_mask() {
            for (x, w) in v.iter_mut().zip(m) {
                *x *= w;
            }
        }
    }

    /// Closure contribution at `t` given the current state and the past,
    /// written to `out` (length `state_dim`).
    pub fn closure_term(
        &self,
        theta: &[f64],
        t: f64,
        x: &[f64],
        past: &Past<'_>,
        side: Side,
        ctx: Option<&EvalContext>,
    ) -> std::result::Result<Vec<f64>, IntegrateError> {
        let n = self.state_dim();
        let u = &x[..n];
        let mut c = match &self.closure.kind {
            ClosureKind::Markovian => self.closure.f.forward(theta, &[u], ctx),
            ClosureKind::Discrete { delays } => {
                let mut lagged = Vec::with_capacity(delays.len());
                for &tau in delays.iter().rev() {
                    let full = past.get(t - tau, side)?;
                    lagged.push(full[..n].to_vec());
                }
                let mut seq: Vec<&[f64]> = lagged.iter().map(Vec::as_slice).collect();
                seq.push(u);
                self.closure.f.forward(theta, &seq, ctx)
            }
            ClosureKind::Distributed { .. } => {
                let input = self.join(u, &x[n..]);
                self.closure.f.forward(theta, &[&input], ctx)
            }
        }
        .map_err(nn_to_integrate)?;
        self.apply_mask(&mut c);
        Ok(c)
    }

    /// Initial memory `y(t0) = ∫_{t0−τ2}^{t0−τ1} g(h(s)) ds` by the trapezoid rule.
    pub fn initial_memory(&self, phi: &[f64], history: &dyn History, t0: f64) -> Result<Vec<f64>> {
        let (ClosureKind::Distributed { tau1, tau2, quad_panels }, Some(g)) = (&self.closure.kind, &self.closure.g)
        else {
            return Ok(Vec::new());
        };
        let mut y = vec![0.0; self.aux_dim()];
        let mut h = vec![0.0; self.state_dim()];
        for (s, w) in trapezoid_nodes(t0 - tau2, t0 - tau1, *quad_panels) {
            history.eval(s, &mut h);
            let gv = g.forward(phi, &[&h], self.base.context(s).as_ref())?;
            for (a, b) in y.iter_mut().zip(&gv) {
                *a += w * b;
            }
        }
        Ok(y)
    }
}

/// History of the combined `[u; y]` state: the given history padded with zeros.
pub(crate) struct PaddedHistory<'a> {
    pub inner: &'a dyn History,
    pub extra: usize,
}

impl History for PaddedHistory<'_> {
    fn dim(&self) -> usize {
        self.inner.dim() + self.extra
    }
    fn eval(&self, t: f64, out: &mut [f64]) {
        let n = self.inner.dim();
        self.inner.eval(t, &mut out[..n]);
        out[n..].fill(0.0);
    }
}

struct ForwardRhs<'a> {
    sys: &'a AugmentedSystem,
    theta: &'a [f64],
    phi: &'a [f64],
}

impl DdeRhs for ForwardRhs<'_> {
    fn dim(&self) -> usize {
        self.sys.total_dim()
    }

    fn eval(&self, t: f64, x: &[f64], past: &Past<'_>, side: Side, out: &mut [f64]) -> crate::integrate::Result<()> {
        let n = self.sys.state_dim();
        let ctx = self.sys.base.context(t);
        self.sys.base.rhs(t, &x[..n], &mut out[..n]);
        let c = self.sys.closure_term(self.theta, t, x, past, side, ctx.as_ref())?;
        for (o, v) in out[..n].iter_mut().zip(&c) {
            *o += v;
        }
        if let (ClosureKind::Distributed { tau1, tau2, .. }, Some(g)) = (&self.sys.closure.kind, &self.sys.closure.g) {
            let eval_g = |tau: f64| -> crate::integrate::Result<Vec<f64>> {
                let (ud, tt) = if tau == 0.0 {
                    (x[..n].to_vec(), t)
                } else {
                    (past.get(t - tau, side)?[..n].to_vec(), t - tau)
                };
                g.forward(self.phi, &[&ud], self.sys.base.context(tt).as_ref()).map_err(nn_to_integrate)
            };
            let g1 = eval_g(*tau1)?;
            let g2 = eval_g(*tau2)?;
            for ((o, a), b) in out[n..].iter_mut().zip(&g1).zip(&g2) {
                *o = a - b;
            }
        }
        Ok(())
    }
}

/// Forward solution of an augmented system.
#[derive(Debug, Clone)]
pub struct ForwardRun {
    /// Combined `[u; y]` trajectory.
    pub traj: DenseTrajectory,
    pub t0: f64,
    pub state_dim: usize,
    /// Times where the right-hand side may be nonsmooth.
    pub breakpoints: Vec<f64>,
}

impl ForwardRun {
    pub fn t_end(&self) -> f64 {
        self.traj.t_end()
    }

    pub fn state_at(&self, t: f64) -> Result<Vec<f64>> {
        let mut v = self.traj.query(t, Side::Above)?;
        v.truncate(self.state_dim);
        Ok(v)
    }

    pub fn states_at(&self, times: &[f64]) -> Result<Vec<Vec<f64>>> {
        times.iter().map(|&t| self.state_at(t)).collect()
    }

    pub fn memory_at(&self, t: f64) -> Result<Vec<f64>> {
        Ok(self.traj.query(t, Side::Above)?.split_off(self.state_dim))
    }
}

/// Integrates the augmented system from `t0` (with `u(t0) = u0` and the given
/// history before it) to `t_end`, landing exactly on every time in `stops`.
#[allow(clippy::too_many_arguments)]
pub fn forward(
    sys: &AugmentedSystem,
    params: &[f64],
    history: &dyn History,
    t0: f64,
    u0: &[f64],
    t_end: f64,
    stepper: &StepperSpec,
    stops: &[f64],
) -> Result<ForwardRun> {
    sys.check_params(params)?;
    if u0.len() != sys.state_dim() || history.dim() != sys.state_dim() {
        return Err(ClosureError::Config(format!(
            "initial state of {} and history of {} for a system of {}",
            u0.len(),
            history.dim(),
            sys.state_dim()
        )));
    }
    let (theta, phi) = sys.closure.split(params);
    let mut x0 = u0.to_vec();
    x0.extend(sys.initial_memory(phi, history, t0)?);
    let padded = PaddedHistory { inner: history, extra: sys.aux_dim() };
    let rhs = ForwardRhs { sys, theta, phi };
    let lags = sys.closure.kind.lags();
    let mut solver = Solver::new(&rhs, &padded, t0, &x0, stepper.clone(), &lags)?;
    let mut bps = propagated_breakpoints(t0, &lags, t_end, 3);
    bps.extend(stops.iter().copied().filter(|&s| s > t0 && s < t_end));
    bps.sort_by(f64::total_cmp);
    bps.dedup();
    solver.add_breakpoints(bps.iter().copied());
    solver.advance_to(t_end)?;
    Ok(ForwardRun { traj: solver.into_trajectory(), t0, state_dim: sys.state_dim(), breakpoints: bps })
}

/// Integrates the low-fidelity model alone.
pub fn forward_base(
    base: &dyn LowFidelityModel,
    t0: f64,
    u0: &[f64],
    t_end: f64,
    stepper: &StepperSpec,
    stops: &[f64],
) -> Result<DenseTrajectory> {
    struct Base<'a>(&'a dyn LowFidelityModel);
    impl DdeRhs for Base<'_> {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn eval(&self, t: f64, u: &[f64], _: &Past<'_>, _: Side, out: &mut [f64]) -> crate::integrate::Result<()> {
            self.0.rhs(t, u, out);
            Ok(())
        }
    }
    let rhs = Base(base);
    let hist = crate::integrate::ConstantHistory(u0.to_vec());
    let mut solver = Solver::new(&rhs, &hist, t0, u0, stepper.clone(), &[])?;
    solver.add_breakpoints(stops.iter().copied().filter(|&s| s > t0 && s < t_end));
    solver.advance_to(t_end)?;
    Ok(solver.into_trajectory())
}

#[cfg(test)]
mod tests;

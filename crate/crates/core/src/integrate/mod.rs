//! ODE and DDE time integration with Hermite dense output.
//!
//! A [`Solver`] advances a [`DdeRhs`] by the method of steps. Step sizes are
//! capped by the smallest positive lag so every delayed lookup reads either
//! the history or an already committed part of the trajectory. Callers can
//! register breakpoints (derivative discontinuities, observation times); the
//! solver lands on them exactly and restarts with a fresh derivative there.

mod dense;
mod steppers;

pub use dense::{DenseTrajectory, Side};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrateError {
    #[error("maximum number of steps exceeded at t = {t}")]
    MaxSteps { t: f64 },
    #[error("non-finite state encountered at t = {t}")]
    NonFinite { t: f64 },
    #[error("lookup at t = {t} outside stored domain [{start}, {end}]")]
    OutOfDomain { t: f64, start: f64, end: f64 },
    #[error("knot at t = {t} precedes last stored time {last}")]
    NonMonotone { t: f64, last: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("newton iteration failed to converge at t = {t}")]
    NewtonFailure { t: f64 },
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("invalid stepper: {0}")]
    InvalidStepper(String),
    #[error("right-hand side failed: {0}")]
    Rhs(String),
}

pub type Result<T> = std::result::Result<T, IntegrateError>;

/// Time-stepping scheme and its controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepperSpec {
    Rk4 {
        dt: f64,
    },
    DormandPrince {
        rtol: f64,
        atol: f64,
        #[serde(default)]
        dt_init: Option<f64>,
        #[serde(default = "default_max_steps")]
        max_steps: usize,
    },
    ImplicitTrapezoid {
        dt: f64,
        #[serde(default = "default_newton_tol")]
        newton_tol: f64,
        #[serde(default = "default_newton_iters")]
        newton_max_iters: usize,
    },
}

fn default_max_steps() -> usize {
    200_000
}
fn default_newton_tol() -> f64 {
    1e-10
}
fn default_newton_iters() -> usize {
    12
}

impl StepperSpec {
    pub fn dopri(rtol: f64, atol: f64) -> Self {
        StepperSpec::DormandPrince { rtol, atol, dt_init: None, max_steps: default_max_steps() }
    }

    pub fn implicit_trapezoid(dt: f64) -> Self {
        StepperSpec::ImplicitTrapezoid {
            dt,
            newton_tol: default_newton_tol(),
            newton_max_iters: default_newton_iters(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(IntegrateError::InvalidStepper(m.to_string()));
        match *self {
            StepperSpec::Rk4 { dt } if !(dt > 0.0 && dt.is_finite()) => bad("rk4 dt must be positive"),
            StepperSpec::DormandPrince { rtol, atol, dt_init, max_steps } => {
                if !(rtol > 0.0 && atol > 0.0) {
                    bad("tolerances must be positive")
                } else if max_steps == 0 {
                    bad("max_steps must be positive")
                } else if dt_init.is_some_and(|h| !(h > 0.0)) {
                    bad("dt_init must be positive")
                } else {
                    Ok(())
                }
            }
            StepperSpec::ImplicitTrapezoid { dt, newton_tol, newton_max_iters } => {
                if !(dt > 0.0 && dt.is_finite()) {
                    bad("implicit trapezoid dt must be positive")
                } else if !(newton_tol > 0.0) || newton_max_iters == 0 {
                    bad("newton controls must be positive")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Pre-start values of a delay problem.
pub trait History: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64, out: &mut [f64]);
}

#[derive(Debug, Clone)]
pub struct ConstantHistory(pub Vec<f64>);

impl History for ConstantHistory {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn eval(&self, _t: f64, out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
}

pub struct FnHistory<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(f64, &mut [f64]) + Send + Sync> FnHistory<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(f64, &mut [f64]) + Send + Sync> History for FnHistory<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, t: f64, out: &mut [f64]) {
        (self.f)(t, out)
    }
}

/// Read access to the solution before the current step: the history for
/// `t < t_start`, the committed trajectory afterwards. At `t_start` itself
/// `Below` reads the history and `Above` the trajectory.
#[derive(Clone, Copy)]
pub struct Past<'a> {
    pub t_start: f64,
    pub history: &'a dyn History,
    pub traj: &'a DenseTrajectory,
}

impl Past<'_> {
    pub fn eval(&self, t: f64, side: Side, out: &mut [f64]) -> Result<()> {
        if t < self.t_start || (t == self.t_start && side == Side::Below) {
            self.history.eval(t, out);
            Ok(())
        } else {
            self.traj.query_into(t, side, out)
        }
    }

    pub fn get(&self, t: f64, side: Side) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.traj.dim()];
        self.eval(t, side, &mut out)?;
        Ok(out)
    }
}

/// Right-hand side of `du/dt = F(t, u(t), past)`.
///
/// `side` is the one-sided limit the solver wants when `t` sits on a
/// breakpoint; implementations pass it on to their past lookups.
pub trait DdeRhs: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64, u: &[f64], past: &Past<'_>, side: Side, out: &mut [f64]) -> Result<()>;
}

/// Adapts a plain ODE right-hand side `f(t, u, out)`.
pub struct OdeFn<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(f64, &[f64], &mut [f64]) + Sync> OdeFn<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(f64, &[f64], &mut [f64]) + Sync> DdeRhs for OdeFn<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, t: f64, u: &[f64], _past: &Past<'_>, _side: Side, out: &mut [f64]) -> Result<()> {
        (self.f)(t, u, out);
        Ok(())
    }
}

/// Method-of-steps integrator holding its own dense output.
pub struct Solver<'a, R: DdeRhs + ?Sized> {
    rhs: &'a R,
    history: &'a dyn History,
    stepper: StepperSpec,
    traj: DenseTrajectory,
    t_start: f64,
    t: f64,
    u: Vec<f64>,
    f: Vec<f64>,
    lag_cap: f64,
    breakpoints: Vec<f64>,
    implicit_dims: usize,
    h_adaptive: Option<f64>,
    steps: usize,
    rhs_evals: usize,
    newton_cache: Option<steppers::NewtonCache>,
}

impl<'a, R: DdeRhs + ?Sized> Solver<'a, R> {
    /// `lags` are the positive delays the right-hand side reads; the step size
    /// never exceeds the smallest of them.
    pub fn new(
        rhs: &'a R,
        history: &'a dyn History,
        t0: f64,
        u0: &[f64],
        stepper: StepperSpec,
        lags: &[f64],
    ) -> Result<Self> {
        stepper.validate()?;
        let dim = rhs.dim();
        if u0.len() != dim {
            return Err(IntegrateError::Dimension { expected: dim, got: u0.len() });
        }
        if history.dim() != dim {
            return Err(IntegrateError::Dimension { expected: dim, got: history.dim() });
        }
        if u0.iter().any(|v| !v.is_finite()) {
            return Err(IntegrateError::NonFinite { t: t0 });
        }
        let lag_cap = lags.iter().copied().filter(|&l| l > 0.0).fold(f64::INFINITY, f64::min);
        let mut s = Self {
            rhs,
            history,
            stepper,
            traj: DenseTrajectory::new(dim),
            t_start: t0,
            t: t0,
            u: u0.to_vec(),
            f: vec![0.0; dim],
            lag_cap,
            breakpoints: Vec::new(),
            implicit_dims: dim,
            h_adaptive: None,
            steps: 0,
            rhs_evals: 0,
            newton_cache: None,
        };
        s.restart()?;
        Ok(s)
    }

    /// Registers times the solver must land on exactly. Values at or before
    /// the current time are ignored.
    pub fn add_breakpoints(&mut self, bps: impl IntoIterator<Item = f64>) {
        self.breakpoints.extend(bps.into_iter().filter(|b| b.is_finite()));
        self.breakpoints.sort_by(f64::total_cmp);
        self.breakpoints.dedup();
    }

    /// For the implicit scheme: only the leading `n` components are solved by
    /// Newton iteration; the trailing ones must not feed back into the
    /// right-hand side and are advanced by the trapezoid rule directly.
    pub fn set_implicit_dims(&mut self, n: usize) {
        self.implicit_dims = n.min(self.u.len());
        self.newton_cache = None;
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn state(&self) -> &[f64] {
        &self.u
    }

    pub fn trajectory(&self) -> &DenseTrajectory {
        &self.traj
    }

    pub fn into_trajectory(self) -> DenseTrajectory {
        self.traj
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    pub fn rhs_evaluations(&self) -> usize {
        self.rhs_evals
    }

    /// Replaces the current state (a jump) and restarts from it.
    pub fn jump(&mut self, new_u: &[f64]) -> Result<()> {
        if new_u.len() != self.u.len() {
            return Err(IntegrateError::Dimension { expected: self.u.len(), got: new_u.len() });
        }
        if new_u.iter().any(|v| !v.is_finite()) {
            return Err(IntegrateError::NonFinite { t: self.t });
        }
        self.u.copy_from_slice(new_u);
        self.restart()
    }

    /// Re-evaluates the derivative from above and records a knot.
    fn restart(&mut self) -> Result<()> {
        let mut f = vec![0.0; self.u.len()];
        self.eval_rhs(self.t, &self.u.clone(), Side::Above, &mut f)?;
        self.f = f;
        let zero_len_dup = self.traj.len() > 0
            && self.traj.t_end() == self.t
            && self.traj.last_state() == Some(&self.u[..])
            && self.traj.knot_slope(self.traj.len() - 1) == &self.f[..];
        if !zero_len_dup {
            self.traj.push(self.t, &self.u, &self.f)?;
        }
        Ok(())
    }

    fn eval_rhs(&mut self, t: f64, u: &[f64], side: Side, out: &mut [f64]) -> Result<()> {
        self.rhs_evals += 1;
        let past = Past { t_start: self.t_start, history: self.history, traj: &self.traj };
        self.rhs.eval(t, u, &past, side, out)?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(IntegrateError::NonFinite { t });
        }
        Ok(())
    }

    fn next_stop(&self, t_end: f64) -> f64 {
        let tol = 1e-13 * (1.0 + self.t.abs());
        self.breakpoints
            .iter()
            .copied()
            .find(|&b| b > self.t + tol)
            .map_or(t_end, |b| b.min(t_end))
    }

    /// Integrates up to `t_end`, stopping and restarting at every breakpoint
    /// on the way.
    pub fn advance_to(&mut self, t_end: f64) -> Result<()> {
        if t_end < self.t {
            return Err(IntegrateError::NonMonotone { t: t_end, last: self.t });
        }
        while self.t < t_end {
            let stop = self.next_stop(t_end);
            match self.stepper.clone() {
                StepperSpec::Rk4 { dt } => self.run_rk4(stop, dt)?,
                StepperSpec::DormandPrince { rtol, atol, dt_init, max_steps } => {
                    self.run_dopri(stop, rtol, atol, dt_init, max_steps)?
                }
                StepperSpec::ImplicitTrapezoid { dt, newton_tol, newton_max_iters } => {
                    self.run_trapezoid(stop, dt, newton_tol, newton_max_iters)?
                }
            }
            self.t = stop;
            self.restart()?;
        }
        Ok(())
    }

    fn commit(&mut self, t_new: f64, u_new: Vec<f64>, f_new: Vec<f64>) -> Result<()> {
        if u_new.iter().any(|v| !v.is_finite()) {
            return Err(IntegrateError::NonFinite { t: t_new });
        }
        self.traj.push(t_new, &u_new, &f_new)?;
        self.t = t_new;
        self.u = u_new;
        self.f = f_new;
        self.steps += 1;
        Ok(())
    }
}

/// Solves an ODE over `[t0, t1]`.
pub fn integrate_ode<F>(rhs: F, u0: &[f64], t_span: (f64, f64), stepper: StepperSpec) -> Result<DenseTrajectory>
where
    F: Fn(f64, &[f64], &mut [f64]) + Sync,
{
    let ode = OdeFn::new(u0.len(), rhs);
    let hist = ConstantHistory(u0.to_vec());
    let mut s = Solver::new(&ode, &hist, t_span.0, u0, stepper, &[])?;
    s.advance_to(t_span.1)?;
    Ok(s.into_trajectory())
}

/// Solves a DDE with the given lags and history over `[t0, t1]`, with
/// breakpoints propagated from the start time.
pub fn integrate_dde<R: DdeRhs + ?Sized>(
    rhs: &R,
    history: &dyn History,
    u0: &[f64],
    lags: &[f64],
    t_span: (f64, f64),
    stepper: StepperSpec,
) -> Result<DenseTrajectory> {
    let mut s = Solver::new(rhs, history, t_span.0, u0, stepper, lags)?;
    s.add_breakpoints(propagated_breakpoints(t_span.0, lags, t_span.1, 3));
    s.advance_to(t_span.1)?;
    Ok(s.into_trajectory())
}

/// Times `t0 + Σ lags` reachable with at most `levels` terms, up to `t_end`.
/// A derivative jump at `t0` reappears at these times with increasing
/// smoothness order.
pub fn propagated_breakpoints(t0: f64, lags: &[f64], t_end: f64, levels: usize) -> Vec<f64> {
    let lags: Vec<f64> = lags.iter().copied().filter(|&l| l > 0.0).collect();
    let mut frontier = vec![0.0_f64];
    let mut out = Vec::new();
    for _ in 0..levels {
        let mut next = Vec::new();
        for &base in &frontier {
            for &l in &lags {
                let s = base + l;
                if t0 + s < t_end {
                    next.push(s);
                }
            }
        }
        next.sort_by(f64::total_cmp);
        next.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
        out.extend(next.iter().map(|s| t0 + s));
        frontier = next;
        if frontier.is_empty() || out.len() > 4096 {
            break;
        }
    }
    out.sort_by(f64::total_cmp);
    out.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    out
}

/// Composite trapezoid nodes and weights on `[a, b]`.
pub fn trapezoid_nodes(a: f64, b: f64, n_panels: usize) -> Vec<(f64, f64)> {
    let n = n_panels.max(1);
    if b == a {
        return Vec::new();
    }
    let h = (b - a) / n as f64;
    (0..=n)
        .map(|i| {
            let t = if i == n { b } else { a + h * i as f64 };
            let w = if i == 0 || i == n { 0.5 * h } else { h };
            (t, w)
        })
        .collect()
}

/// Composite trapezoid estimate of `∫_a^b f`.
pub fn quadrature(f: impl FnMut(f64) -> f64, a: f64, b: f64, n_panels: usize) -> f64 {
    let mut f = f;
    trapezoid_nodes(a, b, n_panels).into_iter().map(|(t, w)| w * f(t)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `u' = -u(t - 1)`
    struct DelayedDecay;
    impl DdeRhs for DelayedDecay {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&self, t: f64, _u: &[f64], past: &Past<'_>, side: Side, out: &mut [f64]) -> Result<()> {
            let mut d = [0.0];
            past.eval(t - 1.0, side, &mut d)?;
            out[0] = -d[0];
            Ok(())
        }
    }

    fn delayed_decay(stepper: StepperSpec) -> DenseTrajectory {
        let h = ConstantHistory(vec![1.0]);
        integrate_dde(&DelayedDecay, &h, &[1.0], &[1.0], (0.0, 2.0), stepper).unwrap()
    }

    #[test]
    fn constant_solution_for_zero_rhs() {
        for st in [StepperSpec::Rk4 { dt: 0.3 }, StepperSpec::dopri(1e-8, 1e-8), StepperSpec::implicit_trapezoid(0.3)] {
            let tr = integrate_ode(|_, _, o: &mut [f64]| o.fill(0.0), &[2.5, -1.0], (0.0, 3.0), st).unwrap();
            for t in [0.0, 0.4, 1.7, 3.0] {
                assert_eq!(tr.query(t, Side::Above).unwrap(), vec![2.5, -1.0]);
            }
        }
    }

    #[test]
    fn exponential_decay_dopri() {
        let tr = integrate_ode(|_, u, o: &mut [f64]| o[0] = -u[0], &[1.0], (0.0, 1.0), StepperSpec::dopri(1e-10, 1e-10))
            .unwrap();
        let u1 = tr.query(1.0, Side::Below).unwrap()[0];
        assert!((u1 - (-1f64).exp()).abs() < 1e-8, "{u1}");
        assert_eq!(tr.query(0.0, Side::Above).unwrap(), vec![1.0]);
    }

    #[test]
    fn rk4_exact_on_constant_slope() {
        let tr = integrate_ode(
            |_, _, o: &mut [f64]| {
                o[0] = 1.0;
                o[1] = 2.0
            },
            &[0.0, 0.0],
            (0.0, 2.0),
            StepperSpec::Rk4 { dt: 0.5 },
        )
        .unwrap();
        assert_eq!(tr.query(2.0, Side::Below).unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn rk4_fourth_order() {
        let err = |dt: f64| {
            let tr = integrate_ode(|_, u, o: &mut [f64]| o[0] = -u[0], &[1.0], (0.0, 1.0), StepperSpec::Rk4 { dt }).unwrap();
            (tr.query(1.0, Side::Below).unwrap()[0] - (-1f64).exp()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((14.0..=18.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn dopri_error_shrinks_with_tolerance() {
        let err = |tol: f64| {
            let tr =
                integrate_ode(|_, u, o: &mut [f64]| o[0] = -u[0], &[1.0], (0.0, 1.0), StepperSpec::dopri(tol, tol)).unwrap();
            (tr.query(1.0, Side::Below).unwrap()[0] - (-1f64).exp()).abs()
        };
        assert!(err(1e-6) >= 10.0 * err(1e-8));
    }

    #[test]
    fn method_of_steps_closed_form() {
        for st in [StepperSpec::dopri(1e-10, 1e-10), StepperSpec::Rk4 { dt: 0.01 }, StepperSpec::implicit_trapezoid(0.001)] {
            let tol = if matches!(st, StepperSpec::ImplicitTrapezoid { .. }) { 1e-6 } else { 1e-9 };
            let tr = delayed_decay(st);
            let u1 = tr.query(1.0, Side::Below).unwrap()[0];
            let u2 = tr.query(2.0, Side::Below).unwrap()[0];
            assert!(u1.abs() < tol, "u(1) = {u1}");
            assert!((u2 + 0.5).abs() < tol, "u(2) = {u2}");
            let t = 1.5;
            let exact = 1.0 - t + (t - 1.0) * (t - 1.0) / 2.0;
            assert!((tr.query(t, Side::Above).unwrap()[0] - exact).abs() < 10.0 * tol);
        }
    }

    #[test]
    fn constant_history_with_zero_rhs_stays_constant() {
        struct Zero;
        impl DdeRhs for Zero {
            fn dim(&self) -> usize {
                2
            }
            fn eval(&self, t: f64, _u: &[f64], past: &Past<'_>, side: Side, out: &mut [f64]) -> Result<()> {
                let mut d = [0.0; 2];
                past.eval(t - 0.3, side, &mut d)?;
                past.eval(t - 0.7, side, &mut d)?;
                out.fill(0.0);
                Ok(())
            }
        }
        let h = ConstantHistory(vec![3.0, -1.0]);
        let tr = integrate_dde(&Zero, &h, &[3.0, -1.0], &[0.3, 0.7], (0.0, 2.0), StepperSpec::dopri(1e-9, 1e-9)).unwrap();
        assert_eq!(tr.query(1.9, Side::Above).unwrap(), vec![3.0, -1.0]);
    }

    #[test]
    fn max_steps_reports_time() {
        let st = StepperSpec::DormandPrince { rtol: 1e-12, atol: 1e-12, dt_init: None, max_steps: 5 };
        let e = integrate_ode(|t, _, o: &mut [f64]| o[0] = (50.0 * t).sin(), &[0.0], (0.0, 10.0), st).unwrap_err();
        assert!(matches!(e, IntegrateError::MaxSteps { t } if t > 0.0 && t < 10.0));
    }

    #[test]
    fn blow_up_is_reported() {
        let e = integrate_ode(|_, u, o: &mut [f64]| o[0] = u[0] * u[0], &[1.0], (0.0, 2.0), StepperSpec::Rk4 { dt: 0.01 })
            .unwrap_err();
        assert!(matches!(e, IntegrateError::NonFinite { .. }));
    }

    #[test]
    fn breakpoints_are_hit_exactly() {
        let ode = OdeFn::new(1, |_, _, o: &mut [f64]| o[0] = 1.0);
        let h = ConstantHistory(vec![0.0]);
        let mut s = Solver::new(&ode, &h, 0.0, &[0.0], StepperSpec::dopri(1e-6, 1e-6), &[]).unwrap();
        s.add_breakpoints([0.123, 0.777]);
        s.advance_to(1.0).unwrap();
        for b in [0.123, 0.777] {
            assert!(s.trajectory().times().contains(&b));
        }
    }

    #[test]
    fn jumps_are_recorded() {
        let ode = OdeFn::new(1, |_, _, o: &mut [f64]| o[0] = 0.0);
        let h = ConstantHistory(vec![0.0]);
        let mut s = Solver::new(&ode, &h, 0.0, &[1.0], StepperSpec::Rk4 { dt: 0.1 }, &[]).unwrap();
        s.advance_to(0.5).unwrap();
        s.jump(&[3.0]).unwrap();
        s.advance_to(1.0).unwrap();
        let tr = s.into_trajectory();
        assert_eq!(tr.query(0.5, Side::Below).unwrap(), vec![1.0]);
        assert_eq!(tr.query(0.5, Side::Above).unwrap(), vec![3.0]);
    }

    #[test]
    fn quadrature_examples() {
        assert_eq!(quadrature(|x| x, 0.0, 1.0, 7), 0.5);
        assert!((quadrature(f64::sin, 0.0, std::f64::consts::PI, 1000) - 2.0).abs() < 1e-5);
        assert_eq!(quadrature(|x| x * x, 2.0, 2.0, 4), 0.0);
    }

    #[test]
    fn implicit_trapezoid_handles_stiff_decay() {
        let tr = integrate_ode(
            |_, u, o: &mut [f64]| o[0] = -100.0 * (u[0] - 1.0),
            &[0.0],
            (0.0, 1.0),
            StepperSpec::implicit_trapezoid(0.05),
        )
        .unwrap();
        assert!((tr.query(1.0, Side::Below).unwrap()[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn propagated_breakpoints_levels() {
        let b = propagated_breakpoints(0.0, &[0.5, 0.75], 2.0, 2);
        assert_eq!(b, vec![0.5, 0.75, 1.0, 1.25, 1.5]);
    }
}

//! Backward sweep in reversed time `s = T − t`.
//!
//! The adjoint `Λ(s) = λ(T − s)` starts at zero, jumps by `−∂l/∂u(T_j)` when
//! the sweep crosses a data time, and reads its own past at `s − τ` for the
//! advanced arguments `λ(t + τ)` (zero beyond `T`). Parameter gradients are
//! integrated alongside as trailing components with `dG/ds = −Λᵀ ∂f/∂θ`, so the
//! integrator's own error control covers the gradient quadrature.

use super::{nn_to_integrate, AugmentedSystem, ClosureError, ClosureKind, ForwardRun, Result};
use crate::integrate::{
    propagated_breakpoints, trapezoid_nodes, ConstantHistory, DdeRhs, DenseTrajectory, History, Past, Side, Solver,
    StepperSpec,
};

/// Loss sensitivity `∂L/∂u(t)` at one observation time.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub t: f64,
    pub grad: Vec<f64>,
}

/// Result of a backward sweep.
#[derive(Debug, Clone)]
pub struct AdjointRun {
    /// `[Λ; M; G_θ; G_φ]` against reversed time `s`.
    pub traj: DenseTrajectory,
    pub t_final: f64,
    pub state_dim: usize,
    pub aux_dim: usize,
    /// `[dL/dθ; dL/dφ]`
    pub grad: Vec<f64>,
}

impl AdjointRun {
    /// `λ(t)`; zero at and beyond the final time.
    pub fn lambda_at(&self, t: f64) -> Result<Vec<f64>> {
        if t >= self.t_final {
            return Ok(vec![0.0; self.state_dim]);
        }
        let mut v = self.traj.query(self.t_final - t, Side::Above)?;
        v.truncate(self.state_dim);
        Ok(v)
    }

    /// `μ(t)` for distributed closures; zero at and beyond the final time.
    pub fn mu_at(&self, t: f64) -> Result<Vec<f64>> {
        if t >= self.t_final {
            return Ok(vec![0.0; self.aux_dim]);
        }
        let v = self.traj.query(self.t_final - t, Side::Above)?;
        Ok(v[self.state_dim..self.state_dim + self.aux_dim].to_vec())
    }
}

fn flip(side: Side) -> Side {
    match side {
        Side::Above => Side::Below,
        Side::Below => Side::Above,
    }
}

struct AdjointRhs<'a> {
    sys: &'a AugmentedSystem,
    theta: &'a [f64],
    phi: &'a [f64],
    fwd: &'a ForwardRun,
    history: &'a dyn History,
    t_final: f64,
}

impl AdjointRhs<'_> {
    fn n(&self) -> usize {
        self.sys.state_dim()
    }

    fn a(&self) -> usize {
        self.sys.aux_dim()
    }

    /// Forward `u` at `t`, from the history before the window start.
    fn u_at(&self, t: f64, side: Side) -> crate::integrate::Result<Vec<f64>> {
        let n = self.n();
        let mut out = vec![0.0; n];
        if t < self.fwd.t0 || (t == self.fwd.t0 && side == Side::Below) {
            self.history.eval(t, &mut out);
        } else {
            let full = self.fwd.traj.query(t, side)?;
            out.copy_from_slice(&full[..n]);
        }
        Ok(out)
    }

    fn y_at(&self, t: f64, side: Side) -> crate::integrate::Result<Vec<f64>> {
        let full = self.fwd.traj.query(t, side)?;
        Ok(full[self.n()..].to_vec())
    }

    /// Closure input sequence at `t` for the discrete and Markovian kinds.
    fn sequence(&self, t: f64, side: Side) -> crate::integrate::Result<Vec<Vec<f64>>> {
        let mut seq = Vec::new();
        if let ClosureKind::Discrete { delays } = &self.sys.closure.kind {
            for &tau in delays.iter().rev() {
                seq.push(self.u_at(t - tau, side)?);
            }
        }
        seq.push(self.u_at(t, side)?);
        Ok(seq)
    }

    /// Adjoint state block at reversed time `s`, zero for `s < 0`.
    fn past_block(&self, past: &Past<'_>, s: f64, side: Side, range: std::ops::Range<usize>) -> crate::integrate::Result<Vec<f64>> {
        if s < 0.0 {
            return Ok(vec![0.0; range.len()]);
        }
        Ok(past.get(s, side)?[range].to_vec())
    }

    fn masked(&self, v: &[f64]) -> Vec<f64> {
        let mut c = v.to_vec();
        self.sys.apply_mask(&mut c);
        c
    }
}

fn is_zero(v: &[f64]) -> bool {
    v.iter().all(|&x| x == 0.0)
}

impl DdeRhs for AdjointRhs<'_> {
    fn dim(&self) -> usize {
        self.n() + self.a() + self.sys.n_params()
    }

    fn eval(&self, s: f64, z: &[f64], past: &Past<'_>, side: Side, out: &mut [f64]) -> crate::integrate::Result<()> {
        let (n, a) = (self.n(), self.a());
        let nt = self.sys.closure.n_theta();
        let f = &self.sys.closure.f;
        let t = self.t_final - s;
        let fs = flip(side);
        let lam = &z[..n];
        out.fill(0.0);

        let u = self.u_at(t, fs)?;
        self.sys.base.vjp(t, &u, lam, &mut out[..n]);
        let ctx = self.sys.base.context(t);
        let cot = self.masked(lam);
        let (d_lam, rest) = out.split_at_mut(n);
        let (d_mu, d_grad) = rest.split_at_mut(a);
        let (g_theta, g_phi) = d_grad.split_at_mut(nt);

        match &self.sys.closure.kind {
            ClosureKind::Markovian | ClosureKind::Discrete { .. } => {
                if !is_zero(&cot) {
                    let seq = self.sequence(t, fs)?;
                    let refs: Vec<&[f64]> = seq.iter().map(Vec::as_slice).collect();
                    let tape = f.forward_tape(self.theta, &refs, ctx.as_ref()).map_err(nn_to_integrate)?;
                    let cots = f.backward(self.theta, &tape, &cot, Some(g_theta)).map_err(nn_to_integrate)?;
                    for (o, c) in d_lam.iter_mut().zip(&cots[cots.len() - 1]) {
                        *o += c;
                    }
                }
                if let ClosureKind::Discrete { delays } = &self.sys.closure.kind {
                    let k = delays.len();
                    for (j, &tau) in delays.iter().enumerate() {
                        let lam_d = self.past_block(past, s - tau, side, 0..n)?;
                        if is_zero(&lam_d) {
                            continue;
                        }
                        let tt = t + tau;
                        let seq = self.sequence(tt, fs)?;
                        let refs: Vec<&[f64]> = seq.iter().map(Vec::as_slice).collect();
                        let ctx_d = self.sys.base.context(tt);
                        let tape = f.forward_tape(self.theta, &refs, ctx_d.as_ref()).map_err(nn_to_integrate)?;
                        let cots = f.backward(self.theta, &tape, &self.masked(&lam_d), None).map_err(nn_to_integrate)?;
                        for (o, c) in d_lam.iter_mut().zip(&cots[k - 1 - j]) {
                            *o += c;
                        }
                    }
                }
            }
            ClosureKind::Distributed { tau1, tau2, .. } => {
                let g = self.sys.closure.g.as_ref().expect("validated distributed closure");
                if !is_zero(&cot) {
                    let y = self.y_at(t, fs)?;
                    let input = self.sys.join(&u, &y);
                    let tape = f.forward_tape(self.theta, &[&input], ctx.as_ref()).map_err(nn_to_integrate)?;
                    let cots = f.backward(self.theta, &tape, &cot, Some(g_theta)).map_err(nn_to_integrate)?;
                    self.sys.split_add(&cots[0], d_lam, d_mu);
                }
                let mu = &z[n..n + a];
                let advanced = |tau: f64| -> crate::integrate::Result<Vec<f64>> {
                    if tau == 0.0 {
                        Ok(mu.to_vec())
                    } else {
                        self.past_block(past, s - tau, side, n..n + a)
                    }
                };
                let (m1, m2) = (advanced(*tau1)?, advanced(*tau2)?);
                let diff: Vec<f64> = m1.iter().zip(&m2).map(|(p, q)| p - q).collect();
                if !is_zero(&diff) {
                    let tape = g.forward_tape(self.phi, &[&u], ctx.as_ref()).map_err(nn_to_integrate)?;
                    let cots = g.backward(self.phi, &tape, &diff, None).map_err(nn_to_integrate)?;
                    for (o, c) in d_lam.iter_mut().zip(&cots[0]) {
                        *o += c;
                    }
                }
                if !is_zero(mu) {
                    let neg: Vec<f64> = mu.iter().map(|v| -v).collect();
                    for (tau, w) in [(*tau1, mu), (*tau2, neg.as_slice())] {
                        let td = t - tau;
                        let ud = self.u_at(td, fs)?;
                        let ctx_d = self.sys.base.context(td);
                        let tape = g.forward_tape(self.phi, &[&ud], ctx_d.as_ref()).map_err(nn_to_integrate)?;
                        g.backward(self.phi, &tape, w, Some(g_phi)).map_err(nn_to_integrate)?;
                    }
                }
            }
        }
        for v in g_theta.iter_mut().chain(g_phi.iter_mut()) {
            *v = -*v;
        }
        Ok(())
    }
}

/// Gradient of `Σ_j l_j(u(T_j))` with respect to the closure parameters,
/// given the forward run and the per-observation loss sensitivities. The
/// sweep runs from the forward run's end back to its start.
pub fn adjoint(
    sys: &AugmentedSystem,
    params: &[f64],
    history: &dyn History,
    fwd: &ForwardRun,
    obs: &[Observation],
    stepper: &StepperSpec,
) -> Result<AdjointRun> {
    sys.check_params(params)?;
    let (n, a, p) = (sys.state_dim(), sys.aux_dim(), sys.n_params());
    let (theta, phi) = sys.closure.split(params);
    let (t0, tf) = (fwd.t0, fwd.t_end());
    let s_end = tf - t0;
    let tol = 1e-12 * (1.0 + tf.abs());

    let mut jumps: Vec<(f64, Vec<f64>)> = Vec::new();
    for o in obs {
        if o.grad.len() != n {
            return Err(ClosureError::Config(format!("observation gradient of {} for state of {n}", o.grad.len())));
        }
        if o.t > tf + tol {
            return Err(ClosureError::Config(format!("observation at {} after forward end {tf}", o.t)));
        }
        if o.t <= t0 {
            continue;
        }
        let s = (tf - o.t).max(0.0);
        match jumps.iter_mut().find(|(sj, _)| (sj - s).abs() <= tol) {
            Some((_, g)) => g.iter_mut().zip(&o.grad).for_each(|(x, y)| *x += y),
            None => jumps.push((s, o.grad.clone())),
        }
    }
    jumps.sort_by(|x, y| x.0.total_cmp(&y.0));

    let mut z0 = vec![0.0; n + a + p];
    let mut first = 0;
    if let Some((s, g)) = jumps.first() {
        if *s <= tol {
            for (zi, gi) in z0.iter_mut().zip(g) {
                *zi = -gi;
            }
            first = 1;
        }
    }

    let rhs = AdjointRhs { sys, theta, phi, fwd, history, t_final: tf };
    let zero = ConstantHistory(vec![0.0; n + a + p]);
    let lags = sys.closure.kind.lags();
    let mut solver = Solver::new(&rhs, &zero, 0.0, &z0, stepper.clone(), &lags)?;
    solver.set_implicit_dims(n + a);

    let mut seeds: Vec<f64> = vec![0.0];
    seeds.extend(jumps.iter().map(|(s, _)| *s));
    seeds.extend(fwd.breakpoints.iter().filter(|&&b| b > t0 && b < tf).map(|b| tf - b));
    let mut bps = Vec::new();
    for &b in &seeds {
        bps.push(b);
        bps.extend(propagated_breakpoints(b, &lags, s_end, 2));
    }
    bps.retain(|&b| b > 0.0 && b < s_end);
    bps.sort_by(f64::total_cmp);
    bps.dedup_by(|x, y| (*x - *y).abs() <= tol);
    solver.add_breakpoints(bps);

    for (s, g) in &jumps[first..] {
        if *s >= s_end {
            break;
        }
        solver.advance_to(*s)?;
        let mut z = solver.state().to_vec();
        for (zi, gi) in z.iter_mut().zip(g) {
            *zi -= gi;
        }
        solver.jump(&z)?;
    }
    solver.advance_to(s_end)?;

    let z_end = solver.state().to_vec();
    let mut grad = z_end[n + a..].to_vec();
    if let (ClosureKind::Distributed { tau1, tau2, quad_panels }, Some(g)) = (&sys.closure.kind, &sys.closure.g) {
        let mu0 = &z_end[n..n + a];
        if !is_zero(mu0) {
            let nt = sys.closure.n_theta();
            let mut gphi = vec![0.0; g.n_params()];
            let mut h = vec![0.0; n];
            for (s, w) in trapezoid_nodes(t0 - tau2, t0 - tau1, *quad_panels) {
                history.eval(s, &mut h);
                let tape = g.forward_tape(phi, &[&h], sys.base.context(s).as_ref())?;
                let wmu: Vec<f64> = mu0.iter().map(|m| w * m).collect();
                g.backward(phi, &tape, &wmu, Some(&mut gphi))?;
            }
            for (o, v) in grad[nt..].iter_mut().zip(&gphi) {
                *o -= v;
            }
        }
    }
    Ok(AdjointRun { traj: solver.into_trajectory(), t_final: tf, state_dim: n, aux_dim: a, grad })
}

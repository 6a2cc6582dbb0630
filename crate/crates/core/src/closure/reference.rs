//! Independent gradient oracles: central finite differences of the loss, and a
//! textbook adjoint for closures without memory.

use super::{nn_to_integrate, AugmentedSystem, ClosureError, ClosureKind, Result};
use crate::integrate::{integrate_ode, ConstantHistory, OdeFn, Side, Solver, StepperSpec};

/// Central-difference gradient of `loss` at `params`, one parameter at a time.
pub fn fd_gradient(params: &[f64], eps: f64, mut loss: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    if !(eps > 0.0) {
        return Err(ClosureError::Config("finite-difference step must be positive".into()));
    }
    let mut p = params.to_vec();
    let mut g = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + eps;
        let lp = loss(&p)?;
        p[i] = orig - eps;
        let lm = loss(&p)?;
        p[i] = orig;
        g.push((lp - lm) / (2.0 * eps));
    }
    Ok(g)
}

/// Closure output and its input/parameter VJPs with no delayed inputs; a
/// distributed closure sees its memory channel held at zero.
fn instantaneous(sys: &AugmentedSystem, theta: &[f64], t: f64, u: &[f64]) -> crate::integrate::Result<Vec<f64>> {
    let input = memoryless_input(sys, u);
    let ctx = sys.base.context(t);
    let mut c = sys.closure.f.forward(theta, &[&input], ctx.as_ref()).map_err(nn_to_integrate)?;
    sys.apply_mask(&mut c);
    Ok(c)
}

fn memoryless_input(sys: &AugmentedSystem, u: &[f64]) -> Vec<f64> {
    match sys.closure.kind {
        ClosureKind::Distributed { .. } => sys.join(u, &vec![0.0; sys.aux_dim()]),
        _ => u.to_vec(),
    }
}

/// Gradient of `Σ_j l(u(T_j))` for a closure that reads only the current
/// state, computed with the classical ODE adjoint `−λ' = Jᵀλ`,
/// `dL/dθ = ∫ λᵀ ∂f/∂θ dt` and jumps `λ ← λ + ∂l/∂u` at data times.
///
/// `loss_grad(j, u)` returns `∂l/∂u` at the `j`-th observation time.
pub fn markovian_reference_gradient(
    sys: &AugmentedSystem,
    params: &[f64],
    t0: f64,
    u0: &[f64],
    obs_times: &[f64],
    loss_grad: &dyn Fn(usize, &[f64]) -> Vec<f64>,
    stepper: &StepperSpec,
) -> Result<Vec<f64>> {
    if let ClosureKind::Discrete { delays } = &sys.closure.kind {
        if !delays.is_empty() {
            return Err(ClosureError::Config("reference adjoint handles closures without delays only".into()));
        }
    }
    let n = sys.state_dim();
    let nt = sys.closure.n_theta();
    let theta = &params[..nt];
    let t_end = obs_times.iter().copied().fold(t0, f64::max);

    let fwd_rhs = OdeFn::new(n, |t: f64, u: &[f64], out: &mut [f64]| {
        sys.base.rhs(t, u, out);
        if let Ok(c) = instantaneous(sys, theta, t, u) {
            out.iter_mut().zip(&c).for_each(|(o, v)| *o += v);
        } else {
            out.fill(f64::NAN);
        }
    });
    let hist = ConstantHistory(u0.to_vec());
    let mut solver = Solver::new(&fwd_rhs, &hist, t0, u0, stepper.clone(), &[])?;
    solver.add_breakpoints(obs_times.iter().copied());
    solver.advance_to(t_end)?;
    let fwd = solver.into_trajectory();

    let mut order: Vec<usize> = (0..obs_times.len()).filter(|&j| obs_times[j] > t0).collect();
    order.sort_by(|&x, &y| obs_times[y].total_cmp(&obs_times[x]));

    let bwd = |s: f64, z: &[f64], out: &mut [f64]| {
        let t = t_end - s;
        let u = match fwd.query(t, Side::Below) {
            Ok(u) => u,
            Err(_) => return out.fill(f64::NAN),
        };
        let lam = &z[..n];
        out.fill(0.0);
        sys.base.vjp(t, &u, lam, &mut out[..n]);
        let mut cot = lam.to_vec();
        sys.apply_mask(&mut cot);
        let input = memoryless_input(sys, &u);
        let ctx = sys.base.context(t);
        let f = &sys.closure.f;
        let res = f.forward_tape(theta, &[&input], ctx.as_ref()).and_then(|tape| {
            let (dl, dg) = out.split_at_mut(n);
            let cots = f.backward(theta, &tape, &cot, Some(&mut dg[..nt]))?;
            let gin = &cots[0];
            match sys.closure.kind {
                ClosureKind::Distributed { .. } => {
                    let mut gy = vec![0.0; sys.aux_dim()];
                    sys.split_add(gin, dl, &mut gy);
                }
                _ => dl.iter_mut().zip(gin).for_each(|(o, v)| *o += v),
            }
            Ok(())
        });
        if res.is_err() {
            out.fill(f64::NAN);
        }
    };

    let p = params.len();
    let mut z = vec![0.0; n + p];
    let mut s_now = 0.0;
    for j in order {
        let s = t_end - obs_times[j];
        if s > s_now {
            let tr = integrate_ode(bwd, &z, (s_now, s), stepper.clone())?;
            z = tr.last_state().expect("nonempty trajectory").to_vec();
            s_now = s;
        }
        let u = fwd.query(obs_times[j], Side::Above)?;
        for (zi, gi) in z.iter_mut().zip(loss_grad(j, &u)) {
            *zi += gi;
        }
    }
    let s_end = t_end - t0;
    if s_end > s_now {
        let tr = integrate_ode(bwd, &z, (s_now, s_end), stepper.clone())?;
        z = tr.last_state().expect("nonempty trajectory").to_vec();
    }
    Ok(z.split_off(n))
}

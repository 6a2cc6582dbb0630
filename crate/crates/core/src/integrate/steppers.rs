//! The three step schemes, implemented as methods on [`Solver`].

use super::{DdeRhs, IntegrateError, Result, Side, Solver};
use crate::linalg::{Lu, Mat};

/// Factored Newton matrix `I - h/2 J` reused across steps of equal size.
pub(super) struct NewtonCache {
    h: f64,
    lu: Lu,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn lincomb(u: &[f64], h: f64, terms: &[(f64, &[f64])], out: &mut [f64]) {
    for i in 0..u.len() {
        let mut s = 0.0;
        for (c, k) in terms {
            s += c * k[i];
        }
        out[i] = u[i] + h * s;
    }
}

impl<R: DdeRhs + ?Sized> Solver<'_, R> {
    fn step_tolerance(&self) -> f64 {
        4.0 * f64::EPSILON * (1.0 + self.t.abs())
    }

    pub(super) fn run_rk4(&mut self, stop: f64, dt: f64) -> Result<()> {
        let dt = dt.min(self.lag_cap);
        let t_begin = self.t;
        let len = stop - t_begin;
        let n = ((len / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let h = len / n as f64;
        let d = self.u.len();
        let (mut y, mut k2, mut k3, mut k4) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        for i in 0..n {
            let t = self.t;
            let t_next = if i + 1 == n { stop } else { t_begin + h * (i + 1) as f64 };
            let hh = t_next - t;
            let u = self.u.clone();
            let k1 = self.f.clone();
            lincomb(&u, 0.5 * hh, &[(1.0, &k1)], &mut y);
            self.eval_rhs(t + 0.5 * hh, &y, Side::Above, &mut k2)?;
            lincomb(&u, 0.5 * hh, &[(1.0, &k2)], &mut y);
            self.eval_rhs(t + 0.5 * hh, &y, Side::Above, &mut k3)?;
            lincomb(&u, hh, &[(1.0, &k3)], &mut y);
            self.eval_rhs(t_next, &y, Side::Below, &mut k4)?;
            let mut u_new = vec![0.0; d];
            lincomb(&u, hh / 6.0, &[(1.0, &k1), (2.0, &k2), (2.0, &k3), (1.0, &k4)], &mut u_new);
            if u_new.iter().any(|v| !v.is_finite()) {
                return Err(IntegrateError::NonFinite { t: t_next });
            }
            let mut f_new = vec![0.0; d];
            self.eval_rhs(t_next, &u_new, Side::Below, &mut f_new)?;
            self.commit(t_next, u_new, f_new)?;
        }
        Ok(())
    }

    fn initial_step(&self, rtol: f64, atol: f64) -> f64 {
        let d = self.u.len().max(1) as f64;
        let (mut d0, mut d1) = (0.0, 0.0);
        for (u, f) in self.u.iter().zip(&self.f) {
            let sc = atol + rtol * u.abs();
            d0 += (u / sc).powi(2);
            d1 += (f / sc).powi(2);
        }
        let (d0, d1) = ((d0 / d).sqrt(), (d1 / d).sqrt());
        if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        }
    }

    pub(super) fn run_dopri(
        &mut self,
        stop: f64,
        rtol: f64,
        atol: f64,
        dt_init: Option<f64>,
        max_steps: usize,
    ) -> Result<()> {
        let d = self.u.len();
        let mut h = self.h_adaptive.or(dt_init).unwrap_or_else(|| self.initial_step(rtol, atol));
        let mut rejects = 0usize;
        let mut k = vec![vec![0.0; d]; 7];
        let mut y = vec![0.0; d];
        let mut y_new = vec![0.0; d];
        while self.t < stop {
            if self.steps + rejects >= max_steps {
                return Err(IntegrateError::MaxSteps { t: self.t });
            }
            h = h.min(self.lag_cap);
            let remaining = stop - self.t;
            let last = h >= remaining;
            let hh = if last { remaining } else { h };
            let t = self.t;
            let u = self.u.clone();
            k[0].copy_from_slice(&self.f);

            let stages = (|| -> Result<()> {
                let (k0, rest) = k.split_at_mut(1);
                let k0 = &k0[0];
                lincomb(&u, hh, &[(A21, k0)], &mut y);
                self.eval_rhs(t + C2 * hh, &y, Side::Above, &mut rest[0])?;
                lincomb(&u, hh, &[(A31, k0), (A32, &rest[0])], &mut y);
                self.eval_rhs(t + C3 * hh, &y, Side::Above, &mut rest[1])?;
                lincomb(&u, hh, &[(A41, k0), (A42, &rest[0]), (A43, &rest[1])], &mut y);
                self.eval_rhs(t + C4 * hh, &y, Side::Above, &mut rest[2])?;
                lincomb(&u, hh, &[(A51, k0), (A52, &rest[0]), (A53, &rest[1]), (A54, &rest[2])], &mut y);
                self.eval_rhs(t + C5 * hh, &y, Side::Above, &mut rest[3])?;
                lincomb(
                    &u,
                    hh,
                    &[(A61, k0), (A62, &rest[0]), (A63, &rest[1]), (A64, &rest[2]), (A65, &rest[3])],
                    &mut y,
                );
                let t6 = if last { stop } else { t + hh };
                self.eval_rhs(t6, &y, Side::Below, &mut rest[4])?;
                lincomb(
                    &u,
                    hh,
                    &[(A71, k0), (A73, &rest[1]), (A74, &rest[2]), (A75, &rest[3]), (A76, &rest[4])],
                    &mut y_new,
                );
                if y_new.iter().any(|v| !v.is_finite()) {
                    return Err(IntegrateError::NonFinite { t: t6 });
                }
                self.eval_rhs(t6, &y_new, Side::Below, &mut rest[5])
            })();

            let err = match stages {
                Ok(()) => {
                    let mut acc = 0.0;
                    for i in 0..d {
                        let e = hh
                            * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
                        let sc = atol + rtol * u[i].abs().max(y_new[i].abs());
                        acc += (e / sc).powi(2);
                    }
                    (acc / d.max(1) as f64).sqrt()
                }
                Err(IntegrateError::NonFinite { .. }) => f64::INFINITY,
                Err(e) => return Err(e),
            };

            if err <= 1.0 {
                let fac = if err == 0.0 { 10.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 10.0) };
                let t_new = if last { stop } else { t + hh };
                self.commit(t_new, y_new.clone(), k[6].clone())?;
                h = if last { (hh * fac).max(h.min(hh * 10.0)) } else { hh * fac };
            } else {
                rejects += 1;
                let fac = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.2, 1.0) } else { 0.2 };
                h = hh * fac;
                if h < self.step_tolerance() {
                    return Err(if err.is_finite() {
                        IntegrateError::StepUnderflow { t }
                    } else {
                        IntegrateError::NonFinite { t }
                    });
                }
            }
        }
        self.h_adaptive = Some(h);
        Ok(())
    }

    pub(super) fn run_trapezoid(&mut self, stop: f64, dt: f64, tol: f64, max_iters: usize) -> Result<()> {
        let dt = dt.min(self.lag_cap);
        while self.t < stop {
            let remaining = stop - self.t;
            let mut hh = if dt >= remaining * (1.0 - 1e-9) { remaining } else { dt };
            loop {
                let t_next = if hh == remaining { stop } else { self.t + hh };
                match self.trapezoid_step(t_next, tol, max_iters) {
                    Ok(()) => break,
                    Err(IntegrateError::NewtonFailure { .. } | IntegrateError::NonFinite { .. }) => {
                        self.newton_cache = None;
                        hh *= 0.5;
                        if hh < self.step_tolerance() {
                            return Err(IntegrateError::NewtonFailure { t: self.t });
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(())
    }

    fn newton_matrix(&mut self, t1: f64, x: &[f64], h: f64) -> Result<Lu> {
        let m = self.implicit_dims;
        let d = x.len();
        let mut f0 = vec![0.0; d];
        self.eval_rhs(t1, x, Side::Below, &mut f0)?;
        let mut jm = Mat::identity(m);
        let mut xp = x.to_vec();
        let mut fp = vec![0.0; d];
        for j in 0..m {
            let delta = f64::EPSILON.sqrt() * x[j].abs().max(1.0);
            xp[j] = x[j] + delta;
            self.eval_rhs(t1, &xp, Side::Below, &mut fp)?;
            xp[j] = x[j];
            for i in 0..m {
                jm[(i, j)] -= 0.5 * h * (fp[i] - f0[i]) / delta;
            }
        }
        Lu::factor(&jm).map_err(|_| IntegrateError::NewtonFailure { t: t1 })
    }

    fn trapezoid_step(&mut self, t1: f64, tol: f64, max_iters: usize) -> Result<()> {
        let h = t1 - self.t;
        let d = self.u.len();
        let m = self.implicit_dims;
        let u = self.u.clone();
        let f0 = self.f.clone();
        let mut x: Vec<f64> = u.iter().zip(&f0).map(|(a, b)| a + h * b).collect();
        let mut fx = vec![0.0; d];

        let mut fresh = false;
        if self.newton_cache.as_ref().map_or(true, |c| c.h != h) {
            let lu = self.newton_matrix(t1, &x, h)?;
            self.newton_cache = Some(NewtonCache { h, lu });
            fresh = true;
        }
        let mut converged = false;
        let mut iters = 0;
        while iters < max_iters {
            iters += 1;
            self.eval_rhs(t1, &x, Side::Below, &mut fx)?;
            let r: Vec<f64> = (0..m).map(|i| x[i] - u[i] - 0.5 * h * (f0[i] + fx[i])).collect();
            let dx = self.newton_cache.as_ref().expect("cache set above").lu.solve(&r).expect("matching dimension");
            let mut nrm = 0.0;
            for i in 0..m {
                x[i] -= dx[i];
                nrm += (dx[i] / (1.0 + x[i].abs())).powi(2);
            }
            if !x.iter().all(|v| v.is_finite()) {
                return Err(IntegrateError::NonFinite { t: t1 });
            }
            if (nrm / m.max(1) as f64).sqrt() <= tol {
                converged = true;
                break;
            }
        }
        if !converged {
            if !fresh {
                self.newton_cache = None;
                return self.trapezoid_step(t1, tol, max_iters);
            }
            return Err(IntegrateError::NewtonFailure { t: t1 });
        }
        if iters > 4 {
            self.newton_cache = None;
        }
        self.eval_rhs(t1, &x, Side::Below, &mut fx)?;
        for i in m..d {
            x[i] = u[i] + 0.5 * h * (f0[i] + fx[i]);
        }
        self.commit(t1, x, fx)
    }
}

//! Viscous Burgers equation on `[0, L]` with homogeneous Dirichlet ends:
//! first-order upwind advection switched on the sign of `u`, second-order
//! central diffusion, and an optional Smagorinsky eddy-viscosity term in flux
//! form.

use super::{LowFidelityModel, ModelError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BurgersConfig {
    pub re: f64,
    pub length: f64,
    pub nx: usize,
}

impl Default for BurgersConfig {
    fn default() -> Self {
        Self { re: 1000.0, length: 1.0, nx: 100 }
    }
}

impl BurgersConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.re > 0.0) || !(self.length > 0.0) || self.nx < 3 {
            return Err(ModelError::Config("burgers needs re > 0, length > 0, nx >= 3".into()));
        }
        Ok(())
    }

    pub fn nu(&self) -> f64 {
        1.0 / self.re
    }

    pub fn dx(&self) -> f64 {
        self.length / (self.nx - 1) as f64
    }

    pub fn grid(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..self.nx).map(|i| if i + 1 == self.nx { self.length } else { i as f64 * dx }).collect()
    }

    pub fn initial_condition(&self) -> Vec<f64> {
        let mut u: Vec<f64> = self.grid().iter().map(|&x| burgers_ic(x, self.re)).collect();
        u[0] = 0.0;
        let n = u.len();
        u[n - 1] = 0.0;
        u
    }
}

/// `x / (1 + sqrt(1/t0) exp(Re x² / 4))` with `t0 = exp(Re/8)`, evaluated in
/// log space so large Reynolds numbers do not overflow.
pub fn burgers_ic(x: f64, re: f64) -> f64 {
    let expo = re * x * x / 4.0 - re / 16.0;
    if expo > 700.0 {
        return x * (-expo).exp();
    }
    x / (1.0 + expo.exp())
}

/// Burgers right-hand side with upwind advection and central diffusion.
pub fn burgers_rhs(u: &[f64], nu: f64, dx: f64, out: &mut [f64]) {
    let n = u.len();
    out[0] = 0.0;
    out[n - 1] = 0.0;
    let inv = 1.0 / dx;
    let inv2 = inv * inv;
    for i in 1..n - 1 {
        let adv = if u[i] >= 0.0 { (u[i] - u[i - 1]) * inv } else { (u[i + 1] - u[i]) * inv };
        out[i] = -u[i] * adv + nu * (u[i + 1] - 2.0 * u[i] + u[i - 1]) * inv2;
    }
}

/// `out = Jᵀ w` for [`burgers_rhs`].
pub fn burgers_vjp(u: &[f64], w: &[f64], nu: f64, dx: f64, out: &mut [f64]) {
    let n = u.len();
    out.fill(0.0);
    let inv = 1.0 / dx;
    let inv2 = inv * inv;
    for i in 1..n - 1 {
        let wi = w[i];
        if wi == 0.0 {
            continue;
        }
        if u[i] >= 0.0 {
            let d = (u[i] - u[i - 1]) * inv;
            out[i] += wi * (-d - u[i] * inv);
            out[i - 1] += wi * u[i] * inv;
        } else {
            let d = (u[i + 1] - u[i]) * inv;
            out[i] += wi * (-d + u[i] * inv);
            out[i + 1] -= wi * u[i] * inv;
        }
        out[i - 1] += wi * nu * inv2;
        out[i] -= 2.0 * wi * nu * inv2;
        out[i + 1] += wi * nu * inv2;
    }
}

/// Adds `∂x(ν_e ∂x u)` with `ν_e = (C_s Δx)² |∂x u|`, using face-averaged
/// eddy viscosity and zero contribution at the Dirichlet ends.
pub fn add_smagorinsky(u: &[f64], cs: f64, dx: f64, out: &mut [f64]) {
    if cs == 0.0 {
        return;
    }
    let n = u.len();
    let c = (cs * dx).powi(2);
    let grad = |i: usize| -> f64 {
        if i == 0 {
            (u[1] - u[0]) / dx
        } else if i == n - 1 {
            (u[n - 1] - u[n - 2]) / dx
        } else {
            (u[i + 1] - u[i - 1]) / (2.0 * dx)
        }
    };
    let nu_e: Vec<f64> = (0..n).map(|i| c * grad(i).abs()).collect();
    let flux: Vec<f64> = (0..n - 1).map(|i| 0.5 * (nu_e[i] + nu_e[i + 1]) * (u[i + 1] - u[i]) / dx).collect();
    for i in 1..n - 1 {
        out[i] += (flux[i] - flux[i - 1]) / dx;
    }
}

pub fn smagorinsky_rhs(u: &[f64], cfg: &BurgersConfig, cs: f64, out: &mut [f64]) {
    burgers_rhs(u, cfg.nu(), cfg.dx(), out);
    add_smagorinsky(u, cs, cfg.dx(), out);
}

/// Linear interpolation of a nodal field from one grid onto another.
pub fn restrict_to_coarse(fine: &[f64], fine_x: &[f64], coarse_x: &[f64]) -> Result<Vec<f64>> {
    if fine.len() != fine_x.len() || fine.len() < 2 {
        return Err(ModelError::Dimension("fine field and grid lengths differ".into()));
    }
    let (lo, hi) = (fine_x[0], fine_x[fine_x.len() - 1]);
    let tol = 1e-12 * (hi - lo).abs().max(1.0);
    coarse_x
        .iter()
        .map(|&x| {
            if x < lo - tol || x > hi + tol {
                return Err(ModelError::Config(format!("coarse node {x} outside fine domain [{lo}, {hi}]")));
            }
            let j = fine_x.partition_point(|&v| v <= x).clamp(1, fine_x.len() - 1);
            let (x0, x1) = (fine_x[j - 1], fine_x[j]);
            if (x - x0).abs() <= tol {
                return Ok(fine[j - 1]);
            }
            if (x - x1).abs() <= tol {
                return Ok(fine[j]);
            }
            let s = (x - x0) / (x1 - x0);
            Ok(fine[j - 1] + s * (fine[j] - fine[j - 1]))
        })
        .collect()
}

/// Burgers on a grid, optionally with the Smagorinsky term.
#[derive(Debug, Clone)]
pub struct BurgersModel {
    pub cfg: BurgersConfig,
    pub cs: f64,
    mask: Vec<f64>,
}

impl BurgersModel {
    pub fn new(cfg: BurgersConfig, cs: f64) -> Result<Self> {
        cfg.validate()?;
        let mut mask = vec![1.0; cfg.nx];
        mask[0] = 0.0;
        mask[cfg.nx - 1] = 0.0;
        Ok(Self { cfg, cs, mask })
    }
}

impl LowFidelityModel for BurgersModel {
    fn dim(&self) -> usize {
        self.cfg.nx
    }

    fn shape(&self) -> (usize, usize) {
        (self.cfg.nx, 1)
    }

    fn rhs(&self, _t: f64, u: &[f64], out: &mut [f64]) {
        smagorinsky_rhs(u, &self.cfg, self.cs, out);
    }

    fn vjp(&self, t: f64, u: &[f64], w: &[f64], out: &mut [f64]) {
        if self.cs == 0.0 {
            burgers_vjp(u, w, self.cfg.nu(), self.cfg.dx(), out);
        } else {
            struct Plain<'a>(&'a BurgersModel);
            impl LowFidelityModel for Plain<'_> {
                fn dim(&self) -> usize {
                    self.0.dim()
                }
                fn rhs(&self, t: f64, u: &[f64], out: &mut [f64]) {
                    self.0.rhs(t, u, out)
                }
            }
            Plain(self).vjp(t, u, w, out)
        }
    }

    fn closure_mask(&self) -> Option<&[f64]> {
        Some(&self.mask)
    }
}

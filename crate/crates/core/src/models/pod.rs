//! Proper orthogonal decomposition of snapshot data and the Galerkin-projected
//! Burgers reduced-order model.
//!
//! Mode derivatives use backward differences for advection (the upwind
//! direction for the nonnegative Burgers solution) and central second
//! differences for diffusion, with zero rows at the Dirichlet nodes. The grid
//! is uniform, so the rectangle-rule weight `Δx` cancels from both sides of the
//! Galerkin equations and the Euclidean product gives the same dynamics.

use super::burgers::BurgersConfig;
use super::{LowFidelityModel, ModelError, Result};
use crate::linalg::{dot, svd, Mat};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PodBasis {
    pub mean: Vec<f64>,
    /// Retained modes, one per entry.
    pub modes: Vec<Vec<f64>>,
    /// All singular values of the centred snapshot matrix.
    pub sigma: Vec<f64>,
}

impl PodBasis {
    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn grid_len(&self) -> usize {
        self.mean.len()
    }

    pub fn energy_fraction(&self, m: usize) -> f64 {
        let total: f64 = self.sigma.iter().map(|s| s * s).sum();
        self.sigma.iter().take(m).map(|s| s * s).sum::<f64>() / total
    }

    /// Cumulative singular-value fraction `Σ_{i≤m} σ_i / Σ σ_i`.
    pub fn amplitude_fraction(&self, m: usize) -> f64 {
        let total: f64 = self.sigma.iter().sum();
        self.sigma.iter().take(m).sum::<f64>() / total
    }

    pub fn truncate(&self, m: usize) -> Result<PodBasis> {
        if m == 0 || m > self.modes.len() {
            return Err(ModelError::Config(format!("cannot keep {m} of {} modes", self.modes.len())));
        }
        Ok(PodBasis { mean: self.mean.clone(), modes: self.modes[..m].to_vec(), sigma: self.sigma.clone() })
    }

    /// `a = Vᵀ (u − ū)`
    pub fn project(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.mean.len() {
            return Err(ModelError::Dimension(format!("field of {} for grid of {}", u.len(), self.mean.len())));
        }
        let c: Vec<f64> = u.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        Ok(self.modes.iter().map(|v| dot(v, &c)).collect())
    }

    /// `u = ū + V a`
    pub fn reconstruct(&self, a: &[f64]) -> Vec<f64> {
        let mut u = self.mean.clone();
        for (v, &ak) in self.modes.iter().zip(a) {
            for (ui, vi) in u.iter_mut().zip(v) {
                *ui += ak * vi;
            }
        }
        u
    }
}

/// POD of snapshots (each entry one field). Keeps every mode with nonzero
/// singular value; use [`PodBasis::truncate`] to reduce.
pub fn compute_pod(snapshots: &[Vec<f64>]) -> Result<PodBasis> {
    if snapshots.len() < 2 {
        return Err(ModelError::Config("POD needs at least two snapshots".into()));
    }
    let n = snapshots[0].len();
    if snapshots.iter().any(|s| s.len() != n) {
        return Err(ModelError::Dimension("snapshots of differing length".into()));
    }
    let inv = 1.0 / snapshots.len() as f64;
    let mut mean = vec![0.0; n];
    for s in snapshots {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v * inv;
        }
    }
    let centred: Vec<Vec<f64>> =
        snapshots.iter().map(|s| s.iter().zip(&mean).map(|(a, b)| a - b).collect()).collect();
    let x = Mat::from_columns(&centred)?;
    if x.frobenius_norm() == 0.0 {
        return Err(ModelError::ZeroEnergy);
    }
    let r = svd(&x)?;
    let smax = r.sigma[0];
    let keep = r.sigma.iter().filter(|&&s| s > smax * 1e-13).count();
    let modes = (0..keep).map(|j| r.u.column(j)).collect();
    Ok(PodBasis { mean, modes, sigma: r.sigma })
}

fn d_back(u: &[f64], dx: f64) -> Vec<f64> {
    let n = u.len();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = (u[i] - u[i - 1]) / dx;
    }
    d
}

fn d2(u: &[f64], dx: f64) -> Vec<f64> {
    let n = u.len();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = (u[i + 1] - 2.0 * u[i] + u[i - 1]) / (dx * dx);
    }
    d
}

/// Burgers residual with backward-difference advection, used by the ROM.
fn rom_residual(u: &[f64], cfg: &BurgersConfig) -> Vec<f64> {
    let dx = cfg.dx();
    let (db, dd) = (d_back(u, dx), d2(u, dx));
    u.iter().zip(db.iter().zip(&dd)).map(|(ui, (a, b))| -ui * a + cfg.nu() * b).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalerkinTensors {
    pub b: Vec<f64>,
    /// `a[k][i]`
    pub a: Vec<Vec<f64>>,
    /// `n[k][i][j]`
    pub n: Vec<Vec<Vec<f64>>>,
}

impl GalerkinTensors {
    pub fn dim(&self) -> usize {
        self.b.len()
    }
}

pub fn galerkin_tensors(basis: &PodBasis, cfg: &BurgersConfig) -> Result<GalerkinTensors> {
    if basis.grid_len() != cfg.nx {
        return Err(ModelError::Dimension(format!("basis grid {} vs nx {}", basis.grid_len(), cfg.nx)));
    }
    let dx = cfg.dx();
    let nu = cfg.nu();
    let ub = &basis.mean;
    let (dub, d2ub) = (d_back(ub, dx), d2(ub, dx));
    let dv: Vec<Vec<f64>> = basis.modes.iter().map(|v| d_back(v, dx)).collect();
    let d2v: Vec<Vec<f64>> = basis.modes.iter().map(|v| d2(v, dx)).collect();
    let m = basis.n_modes();
    let grid = 0..cfg.nx;
    let b = basis
        .modes
        .iter()
        .map(|vk| grid.clone().map(|p| vk[p] * (-ub[p] * dub[p] + nu * d2ub[p])).sum())
        .collect();
    let a = (0..m)
        .map(|k| {
            (0..m)
                .map(|i| {
                    let (vk, vi) = (&basis.modes[k], &basis.modes[i]);
                    grid.clone().map(|p| vk[p] * (-vi[p] * dub[p] - ub[p] * dv[i][p] + nu * d2v[i][p])).sum()
                })
                .collect()
        })
        .collect();
    let n = (0..m)
        .map(|k| {
            (0..m)
                .map(|i| {
                    (0..m)
                        .map(|j| {
                            let (vk, vi) = (&basis.modes[k], &basis.modes[i]);
                            -grid.clone().map(|p| vk[p] * vi[p] * dv[j][p]).sum::<f64>()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(GalerkinTensors { b, a, n })
}

/// `b_k + A_ki a_i + N_kij a_i a_j`
pub fn rom_rhs(a: &[f64], t: &GalerkinTensors, out: &mut [f64]) {
    let m = t.dim();
    for k in 0..m {
        let mut s = t.b[k];
        for i in 0..m {
            s += t.a[k][i] * a[i];
            let row = &t.n[k][i];
            let q: f64 = row.iter().zip(a).map(|(n, aj)| n * aj).sum();
            s += a[i] * q;
        }
        out[k] = s;
    }
}

/// Projects the reconstructed field's residual directly, without the
/// precomputed tensors.
pub fn rom_rhs_direct(a: &[f64], basis: &PodBasis, cfg: &BurgersConfig) -> Vec<f64> {
    let u = basis.reconstruct(a);
    let r = rom_residual(&u, cfg);
    basis.modes.iter().map(|v| dot(v, &r)).collect()
}

/// POD-Galerkin Burgers ROM as a low-fidelity model.
#[derive(Debug, Clone)]
pub struct RomModel {
    pub tensors: GalerkinTensors,
}

impl LowFidelityModel for RomModel {
    fn dim(&self) -> usize {
        self.tensors.dim()
    }

    fn rhs(&self, _t: f64, u: &[f64], out: &mut [f64]) {
        rom_rhs(u, &self.tensors, out);
    }

    fn vjp(&self, _t: f64, a: &[f64], w: &[f64], out: &mut [f64]) {
        let m = self.dim();
        let t = &self.tensors;
        out.fill(0.0);
        for k in 0..m {
            for i in 0..m {
                let mut jac = t.a[k][i];
                for j in 0..m {
                    jac += (t.n[k][i][j] + t.n[k][j][i]) * a[j];
                }
                out[i] += w[k] * jac;
            }
        }
    }
}

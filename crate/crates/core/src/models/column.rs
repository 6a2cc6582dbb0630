//! 1-D vertical column: local biology at every cell plus eddy diffusion
//! `∂z(K_z(z, M(t)) ∂z B)` in flux form with zero flux through the surface and
//! the bottom. State is point-major: `u[k * species + s]`, cell `k = 0` at the
//! surface.

use super::bio::{nnpzd_initial, nnpzd_rhs, npz_initial, npz_jacobian, npz_rhs, BioParams};
use super::{LowFidelityModel, ModelError, Result};
use crate::nn::EvalContext;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColumnConfig {
    pub nz: usize,
    /// Negative total depth.
    pub depth: f64,
    pub kzb: f64,
    pub kz0: f64,
    pub gamma_thermo: f64,
    pub mld_mean: f64,
    pub mld_amp: f64,
    pub period: f64,
    pub i0_mean: f64,
    /// Relative amplitude of the seasonal irradiance cycle.
    pub i0_amp: f64,
    pub tbio_surface: f64,
    pub tbio_bottom: f64,
}

impl Default for ColumnConfig {
    fn default() -> Self {
        Self {
            nz: 20,
            depth: -100.0,
            kzb: 0.0864,
            kz0: 8.64,
            gamma_thermo: 0.1,
            mld_mean: -30.0,
            mld_amp: 20.0,
            period: 364.0,
            i0_mean: 158.075,
            i0_amp: 0.5,
            tbio_surface: 10.0,
            tbio_bottom: 30.0,
        }
    }
}

impl ColumnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nz < 2 {
            return Err(ModelError::Config("column needs at least two cells".into()));
        }
        if !(self.depth < 0.0) || !(self.gamma_thermo > 0.0) {
            return Err(ModelError::Config("depth must be negative and gamma_thermo positive".into()));
        }
        if !(self.kz0 > self.kzb && self.kzb > 0.0) {
            return Err(ModelError::Config("need kz0 > kzb > 0".into()));
        }
        if !(self.period > 0.0) {
            return Err(ModelError::Config("period must be positive".into()));
        }
        Ok(())
    }

    pub fn dz(&self) -> f64 {
        -self.depth / self.nz as f64
    }

    /// Cell-centre depths, surface first.
    pub fn centres(&self) -> Vec<f64> {
        (0..self.nz).map(|k| self.depth * (k as f64 + 0.5) / self.nz as f64).collect()
    }

    /// Interior face depths between cells `k` and `k + 1`.
    pub fn interior_faces(&self) -> Vec<f64> {
        (1..self.nz).map(|k| self.depth * k as f64 / self.nz as f64).collect()
    }

    pub fn mixed_layer_depth(&self, t: f64) -> f64 {
        self.mld_mean + self.mld_amp * (2.0 * PI * t / self.period).cos()
    }

    pub fn surface_irradiance(&self, t: f64) -> f64 {
        self.i0_mean * (1.0 + self.i0_amp * (2.0 * PI * t / self.period).cos())
    }

    pub fn total_biomass(&self, z: f64) -> f64 {
        self.tbio_surface + (self.tbio_bottom - self.tbio_surface) * (z / self.depth)
    }
}

pub fn kz_profile(z: f64, m: f64, cfg: &ColumnConfig) -> Result<f64> {
    let g = cfg.gamma_thermo;
    let bottom = (-g * (m - cfg.depth)).atan();
    let den = (-g * m).atan() - bottom;
    if den.abs() < 1e-14 {
        return Err(ModelError::Config(format!("K_z denominator vanishes for mixed-layer depth {m}")));
    }
    Ok(cfg.kzb + (cfg.kz0 - cfg.kzb) * ((-g * (m - z)).atan() - bottom) / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ecosystem {
    Npz,
    Nnpzd,
}

impl Ecosystem {
    pub fn species(self) -> usize {
        match self {
            Ecosystem::Npz => 3,
            Ecosystem::Nnpzd => 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ColumnModel {
    pub cfg: ColumnConfig,
    pub params: BioParams,
    pub eco: Ecosystem,
    pub biology: bool,
    centres: Vec<f64>,
    faces: Vec<f64>,
}

impl ColumnModel {
    pub fn new(cfg: ColumnConfig, params: BioParams, eco: Ecosystem) -> Result<Self> {
        cfg.validate()?;
        params.validate()?;
        let (centres, faces) = (cfg.centres(), cfg.interior_faces());
        Ok(Self { cfg, params, eco, biology: true, centres, faces })
    }

    pub fn without_biology(mut self) -> Self {
        self.biology = false;
        self
    }

    pub fn species(&self) -> usize {
        self.eco.species()
    }

    /// Face coefficients `K_z / Δz²` at time `t`.
    fn face_coeffs(&self, t: f64) -> Vec<f64> {
        let m = self.cfg.mixed_layer_depth(t);
        let h2 = self.cfg.dz().powi(2);
        self.faces.iter().map(|&z| kz_profile(z, m, &self.cfg).expect("validated column") / h2).collect()
    }

    fn growth(&self, t: f64) -> Vec<f64> {
        let i0 = self.cfg.surface_irradiance(t);
        self.centres.iter().map(|&z| self.params.growth(z, i0)).collect()
    }

    /// Symmetric flux-form diffusion, added into `out`.
    fn add_diffusion(&self, coeffs: &[f64], u: &[f64], out: &mut [f64]) {
        let ns = self.species();
        for (k, c) in coeffs.iter().enumerate() {
            for s in 0..ns {
                let flux = c * (u[(k + 1) * ns + s] - u[k * ns + s]);
                out[k * ns + s] += flux;
                out[(k + 1) * ns + s] -= flux;
            }
        }
    }

    /// Initial profile: `P` and `Z` seeded, remaining local total biomass as nutrient.
    pub fn initial_state(&self, p0: f64, z0: f64) -> Vec<f64> {
        self.centres
            .iter()
            .flat_map(|&z| {
                let t = self.cfg.total_biomass(z);
                match self.eco {
                    Ecosystem::Npz => npz_initial(t, p0, z0).to_vec(),
                    Ecosystem::Nnpzd => nnpzd_initial(t, p0, z0).to_vec(),
                }
            })
            .collect()
    }

    /// Depth-integrated amount of each species.
    pub fn column_totals(&self, u: &[f64]) -> Vec<f64> {
        let ns = self.species();
        (0..ns).map(|s| (0..self.cfg.nz).map(|k| u[k * ns + s]).sum::<f64>() * self.cfg.dz()).collect()
    }
}

impl LowFidelityModel for ColumnModel {
    fn dim(&self) -> usize {
        self.cfg.nz * self.species()
    }

    fn shape(&self) -> (usize, usize) {
        (self.cfg.nz, self.species())
    }

    fn rhs(&self, t: f64, u: &[f64], out: &mut [f64]) {
        let ns = self.species();
        if self.biology {
            let g = self.growth(t);
            for k in 0..self.cfg.nz {
                let (s, o) = (&u[k * ns..(k + 1) * ns], &mut out[k * ns..(k + 1) * ns]);
                match self.eco {
                    Ecosystem::Npz => npz_rhs(s, &self.params, g[k], o),
                    Ecosystem::Nnpzd => nnpzd_rhs(s, &self.params, g[k], o),
                }
            }
        } else {
            out.fill(0.0);
        }
        self.add_diffusion(&self.face_coeffs(t), u, out);
    }

    fn vjp(&self, t: f64, u: &[f64], w: &[f64], out: &mut [f64]) {
        let ns = self.species();
        out.fill(0.0);
        if self.biology {
            let g = self.growth(t);
            for k in 0..self.cfg.nz {
                let (s, wk) = (&u[k * ns..(k + 1) * ns], &w[k * ns..(k + 1) * ns]);
                let o = &mut out[k * ns..(k + 1) * ns];
                match self.eco {
                    Ecosystem::Npz => {
                        let j = npz_jacobian(s, &self.params, g[k]);
                        for c in 0..3 {
                            o[c] = (0..3).map(|r| wk[r] * j[r][c]).sum();
                        }
                    }
                    Ecosystem::Nnpzd => {
                        let mut sp = s.to_vec();
                        let (mut fp, mut fm) = ([0.0; 5], [0.0; 5]);
                        for c in 0..5 {
                            let h = 1e-6 * s[c].abs().max(1.0);
                            sp[c] = s[c] + h;
                            nnpzd_rhs(&sp, &self.params, g[k], &mut fp);
                            sp[c] = s[c] - h;
                            nnpzd_rhs(&sp, &self.params, g[k], &mut fm);
                            sp[c] = s[c];
                            o[c] = (0..5).map(|r| wk[r] * (fp[r] - fm[r])).sum::<f64>() / (2.0 * h);
                        }
                    }
                }
            }
        }
        self.add_diffusion(&self.face_coeffs(t), w, out);
    }

    fn context(&self, t: f64) -> Option<EvalContext> {
        let i0 = self.cfg.surface_irradiance(t);
        let scale = -self.cfg.depth;
        Some(EvalContext {
            depth: self.centres.iter().map(|z| z / scale).collect(),
            irradiance: self.centres.iter().map(|&z| self.params.irradiance(z, i0) / self.cfg.i0_mean).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn kz_endpoints_and_monotonicity() {
        let cfg = ColumnConfig::default();
        for m in [-10.0, -30.0, -50.0] {
            assert_eq!(kz_profile(0.0, m, &cfg).unwrap(), cfg.kz0);
            assert!((kz_profile(cfg.depth, m, &cfg).unwrap() - cfg.kzb).abs() < 1e-15);
            let vals: Vec<f64> = (0..=200).map(|i| kz_profile(cfg.depth * i as f64 / 200.0, m, &cfg).unwrap()).collect();
            assert!(vals.windows(2).all(|w| w[1] <= w[0]));
        }
        let flat = ColumnConfig { depth: -1e-300, ..ColumnConfig::default() };
        assert!(kz_profile(0.0, -30.0, &flat).is_err());
    }

    #[test]
    fn diffusion_of_linear_profile() {
        let cfg = ColumnConfig::default();
        let m = ColumnModel::new(cfg.clone(), BioParams::default(), Ecosystem::Npz).unwrap().without_biology();
        let mut u = vec![0.0; 60];
        for (k, z) in cfg.centres().iter().enumerate() {
            for s in 0..3 {
                u[k * 3 + s] = 1.0 + 0.1 * z * (s + 1) as f64;
            }
        }
        let coeffs = vec![0.7; cfg.nz - 1];
        let mut out = vec![0.0; 60];
        m.add_diffusion(&coeffs, &u, &mut out);
        for k in 1..cfg.nz - 1 {
            for s in 0..3 {
                assert!(out[k * 3 + s].abs() < 1e-13);
            }
        }
        // surface cell only loses the flux through its lower face
        let jump = 0.1 * (cfg.centres()[1] - cfg.centres()[0]);
        assert!((out[0] - 0.7 * jump).abs() < 1e-13);
        assert!((out[57] + 0.7 * jump).abs() < 1e-13);
    }

    #[test]
    fn conservation_with_and_without_biology() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for eco in [Ecosystem::Npz, Ecosystem::Nnpzd] {
            let m = ColumnModel::new(ColumnConfig::default(), BioParams::default(), eco).unwrap();
            let u: Vec<f64> = (0..m.dim()).map(|_| rng.gen_range(0.0..10.0)).collect();
            let mut out = vec![0.0; m.dim()];
            m.clone().without_biology().rhs(40.0, &u, &mut out);
            for s in 0..m.species() {
                let tot: f64 = (0..20).map(|k| out[k * m.species() + s]).sum();
                assert!(tot.abs() < 1e-12);
            }
            m.rhs(40.0, &u, &mut out);
            assert!(out.iter().sum::<f64>().abs() < 1e-11);
        }
    }

    #[test]
    fn initial_state_and_context() {
        let m = ColumnModel::new(ColumnConfig::default(), BioParams::default(), Ecosystem::Npz).unwrap();
        let u = m.initial_state(0.1, 0.1);
        let z0 = m.cfg.centres()[0];
        assert!((u.iter().take(3).sum::<f64>() - m.cfg.total_biomass(z0)).abs() < 1e-12);
        assert_eq!(m.cfg.total_biomass(0.0), 10.0);
        assert_eq!(m.cfg.total_biomass(-100.0), 30.0);
        let c = m.context(0.0).unwrap();
        assert_eq!(c.depth.len(), 20);
        assert!(c.irradiance[0] > c.irradiance[19]);
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for eco in [Ecosystem::Npz, Ecosystem::Nnpzd] {
            let m = ColumnModel::new(ColumnConfig::default(), BioParams::default(), eco).unwrap();
            let u: Vec<f64> = (0..m.dim()).map(|_| rng.gen_range(0.1..10.0)).collect();
            let w: Vec<f64> = (0..m.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert!(crate::models::check_vjp(&m, 17.0, &u, &w) < 1e-6);
        }
    }
}

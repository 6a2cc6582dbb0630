//! NPZ and NNPZD marine ecosystem models with the saturating optical growth
//! term. Depth `z` is negative downward.

use super::LowFidelityModel;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BioParams {
    pub k_w: f64,
    pub alpha_pi: f64,
    pub i0_surface: f64,
    pub v_m: f64,
    pub k_u: f64,
    pub xi: f64,
    pub r_m: f64,
    pub lambda: f64,
    pub gamma_egest: f64,
    pub gamma_z: f64,
    pub t_bio: f64,
    pub psi: f64,
    pub phi_d: f64,
    pub omega: f64,
    pub z_eval: f64,
}

impl Default for BioParams {
    fn default() -> Self {
        Self {
            k_w: 0.067,
            alpha_pi: 0.025,
            i0_surface: 158.075,
            v_m: 1.5,
            k_u: 1.0,
            xi: 0.1,
            r_m: 1.52,
            lambda: 0.06,
            gamma_egest: 0.3,
            gamma_z: 0.145,
            t_bio: 30.0,
            psi: 1.46,
            phi_d: 0.175,
            omega: 0.041,
            z_eval: -25.0,
        }
    }
}

impl BioParams {
    pub fn validate(&self) -> Result<(), super::ModelError> {
        let all = [
            self.k_w,
            self.alpha_pi,
            self.i0_surface,
            self.v_m,
            self.k_u,
            self.xi,
            self.r_m,
            self.lambda,
            self.gamma_egest,
            self.gamma_z,
            self.t_bio,
            self.psi,
            self.phi_d,
            self.omega,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || !self.z_eval.is_finite() {
            return Err(super::ModelError::Config("biological parameters must be finite and nonnegative".into()));
        }
        Ok(())
    }

    pub fn irradiance(&self, z: f64, i0: f64) -> f64 {
        i0 * (self.k_w * z).exp()
    }

    /// `V_m αI / sqrt(V_m² + α²I²)`
    pub fn growth_from_irradiance(&self, i: f64) -> f64 {
        let ai = self.alpha_pi * i;
        self.v_m * ai / (self.v_m * self.v_m + ai * ai).sqrt()
    }

    pub fn growth(&self, z: f64, i0: f64) -> f64 {
        self.growth_from_irradiance(self.irradiance(z, i0))
    }
}

/// Zooplankton grazing `R_m Z (1 − e^{−ΛP})` and its partials in P and Z.
fn grazing(p: f64, z: f64, prm: &BioParams) -> (f64, f64, f64) {
    let e = (-prm.lambda * p).exp();
    (prm.r_m * z * (1.0 - e), prm.r_m * z * prm.lambda * e, prm.r_m * (1.0 - e))
}

pub fn npz_rhs(s: &[f64], prm: &BioParams, g: f64, out: &mut [f64]) {
    let (n, p, z) = (s[0], s[1], s[2]);
    let uptake = g * p * n / (n + prm.k_u);
    let (gr, _, _) = grazing(p, z, prm);
    out[0] = -uptake + prm.xi * p + prm.gamma_z * z + prm.gamma_egest * gr;
    out[1] = uptake - prm.xi * p - gr;
    out[2] = (1.0 - prm.gamma_egest) * gr - prm.gamma_z * z;
}

/// Row-major 3×3 Jacobian of [`npz_rhs`].
pub fn npz_jacobian(s: &[f64], prm: &BioParams, g: f64) -> [[f64; 3]; 3] {
    let (n, p, z) = (s[0], s[1], s[2]);
    let den = n + prm.k_u;
    let (du_dn, du_dp) = (g * p * prm.k_u / (den * den), g * n / den);
    let (_, dg_dp, dg_dz) = grazing(p, z, prm);
    let ge = prm.gamma_egest;
    [
        [-du_dn, -du_dp + prm.xi + ge * dg_dp, prm.gamma_z + ge * dg_dz],
        [du_dn, du_dp - prm.xi - dg_dp, -dg_dz],
        [0.0, (1.0 - ge) * dg_dp, (1.0 - ge) * dg_dz - prm.gamma_z],
    ]
}

/// State order `(NO3, NH4, P, Z, D)`.
pub fn nnpzd_rhs(s: &[f64], prm: &BioParams, g: f64, out: &mut [f64]) {
    let (no3, nh4, p, z, d) = (s[0], s[1], s[2], s[3], s[4]);
    let up_no3 = g * no3 / (no3 + prm.k_u) * (-prm.psi * nh4).exp() * p;
    let up_nh4 = g * nh4 / (nh4 + prm.k_u) * p;
    let (gr, _, _) = grazing(p, z, prm);
    out[0] = prm.omega * nh4 - up_no3;
    out[1] = -prm.omega * nh4 + prm.phi_d * d + prm.gamma_z * z - up_nh4;
    out[2] = up_no3 + up_nh4 - prm.xi * p - gr;
    out[3] = (1.0 - prm.gamma_egest) * gr - prm.gamma_z * z;
    out[4] = prm.gamma_egest * gr + prm.xi * p - prm.phi_d * d;
}

/// `(NO3 + NH4 + D, P, Z)`
pub fn aggregate_nnpzd(s: &[f64]) -> [f64; 3] {
    [s[0] + s[1] + s[4], s[2], s[3]]
}

/// NPZ start with `P` and `Z` seeded and the rest of `total` as nutrient.
pub fn npz_initial(total: f64, p0: f64, z0: f64) -> [f64; 3] {
    [total - p0 - z0, p0, z0]
}

/// NNPZD start whose aggregate equals [`npz_initial`].
pub fn nnpzd_initial(total: f64, p0: f64, z0: f64) -> [f64; 5] {
    let n = 0.5 * (total - p0 - z0);
    [n, n, p0, z0, 0.0]
}

/// 0-D NPZ at fixed depth and irradiance.
#[derive(Debug, Clone)]
pub struct NpzModel {
    pub params: BioParams,
}

impl NpzModel {
    fn g(&self) -> f64 {
        self.params.growth(self.params.z_eval, self.params.i0_surface)
    }
}

impl LowFidelityModel for NpzModel {
    fn dim(&self) -> usize {
        3
    }

    fn rhs(&self, _t: f64, u: &[f64], out: &mut [f64]) {
        npz_rhs(u, &self.params, self.g(), out);
    }

    fn vjp(&self, _t: f64, u: &[f64], w: &[f64], out: &mut [f64]) {
        let j = npz_jacobian(u, &self.params, self.g());
        for c in 0..3 {
            out[c] = (0..3).map(|r| w[r] * j[r][c]).sum();
        }
    }
}

/// 0-D NNPZD at fixed depth and irradiance.
#[derive(Debug, Clone)]
pub struct NnpzdModel {
    pub params: BioParams,
}

impl LowFidelityModel for NnpzdModel {
    fn dim(&self) -> usize {
        5
    }

    fn rhs(&self, _t: f64, u: &[f64], out: &mut [f64]) {
        let g = self.params.growth(self.params.z_eval, self.params.i0_surface);
        nnpzd_rhs(u, &self.params, g, out);
    }
}

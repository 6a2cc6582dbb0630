//! Truth data and low-fidelity models for each experiment.

use std::sync::Arc;

use super::{ExperimentConfig, ExperimentKind, Result};
use crate::closure::forward_base;
use crate::integrate::{integrate_dde, ConstantHistory, DdeRhs, Past, Side, StepperSpec};
use crate::linalg::Mat;
use crate::models::bio::{aggregate_nnpzd, nnpzd_initial, NnpzdModel, NpzModel};
use crate::models::burgers::{restrict_to_coarse, BurgersConfig, BurgersModel};
use crate::models::column::{ColumnModel, Ecosystem};
use crate::models::pod::{compute_pod, galerkin_tensors, PodBasis, RomModel};
use crate::models::{LinearModel, LowFidelityModel};
use crate::train::SnapshotDataset;

/// Everything generated for one experiment before training.
#[derive(Clone)]
pub struct Truth {
    /// Truth in the low-fidelity model's coordinates over the whole run.
    pub data: SnapshotDataset,
    /// Underlying high-fidelity states at the data times, when they differ
    /// from `data` (full-order field, fine grid, or unaggregated NNPZD).
    pub high_fidelity: Option<Vec<Vec<f64>>>,
    /// POD basis of the reduced-order experiment.
    pub pod: Option<PodBasis>,
    pub base: Arc<dyn LowFidelityModel>,
    /// Coarse-grid Smagorinsky model of the subgrid experiment.
    pub smagorinsky: Option<Arc<dyn LowFidelityModel>>,
}

impl std::fmt::Debug for Truth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Truth").field("len", &self.data.len()).field("dim", &self.data.dim()).finish()
    }
}

pub fn data_times(t_end: f64, dt: f64) -> Vec<f64> {
    let n = (t_end / dt).round() as usize;
    (0..=n).map(|i| i as f64 * dt).collect()
}

/// Solves `model` from `u0` at `t = 0` and samples it at `times`.
pub fn sample_model(
    model: &dyn LowFidelityModel,
    u0: &[f64],
    times: &[f64],
    stepper: &StepperSpec,
) -> Result<Vec<Vec<f64>>> {
    let t_end = times.iter().copied().fold(0.0, f64::max);
    let traj = forward_base(model, 0.0, u0, t_end, stepper, times)?;
    Ok(traj.sample(times)?)
}

/// The toy truth: the toy linear model plus delayed linear feedback
/// `K u(t − 0.25)`.
struct ToyTruth {
    base: LinearModel,
    k: Mat,
}

pub const TOY_TRUTH_LAG: f64 = 0.25;

impl DdeRhs for ToyTruth {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, t: f64, u: &[f64], past: &Past<'_>, side: Side, out: &mut [f64]) -> crate::integrate::Result<()> {
        self.base.rhs(t, u, out);
        let d = past.get(t - TOY_TRUTH_LAG, side)?;
        for (i, o) in out.iter_mut().enumerate() {
            *o += (0..2).map(|j| self.k[(i, j)] * d[j]).sum::<f64>();
        }
        Ok(())
    }
}

pub const TOY_U0: [f64; 2] = [1.0, 0.0];

fn toy(cfg: &ExperimentConfig, times: &[f64]) -> Result<Truth> {
    let rhs = ToyTruth {
        base: LinearModel::toy(),
        k: Mat::from_rows(&[vec![-0.3, 0.2], vec![-0.2, -0.3]]).expect("2x2"),
    };
    let traj = integrate_dde(
        &rhs,
        &ConstantHistory(TOY_U0.to_vec()),
        &TOY_U0,
        &[TOY_TRUTH_LAG],
        (0.0, cfg.spans.end()),
        cfg.steppers.truth.clone(),
    )?;
    Ok(Truth {
        data: SnapshotDataset::new(times.to_vec(), traj.sample(times)?)?,
        high_fidelity: None,
        pod: None,
        base: Arc::new(LinearModel::toy()),
        smagorinsky: None,
    })
}

/// POD basis from full-order snapshots on `[0, pod_t_end]`.
pub fn pod_basis(cfg: &ExperimentConfig) -> Result<PodBasis> {
    let fom = BurgersModel::new(cfg.burgers.clone(), 0.0)?;
    let times = data_times(cfg.rom.pod_t_end, cfg.spans.dt_data);
    let snaps = sample_model(&fom, &cfg.burgers.initial_condition(), &times, &cfg.steppers.truth)?;
    Ok(compute_pod(&snaps)?)
}

fn rom(cfg: &ExperimentConfig, times: &[f64]) -> Result<Truth> {
    let basis = pod_basis(cfg)?.truncate(cfg.rom.n_modes)?;
    let a0 = basis.project(&cfg.burgers.initial_condition())?;
    let u0 = basis.reconstruct(&a0);
    let fom = BurgersModel::new(cfg.burgers.clone(), 0.0)?;
    let fields = sample_model(&fom, &u0, times, &cfg.steppers.truth)?;
    let coeffs = fields.iter().map(|u| basis.project(u)).collect::<std::result::Result<Vec<_>, _>>()?;
    let base = RomModel { tensors: galerkin_tensors(&basis, &cfg.burgers)? };
    Ok(Truth {
        data: SnapshotDataset::new(times.to_vec(), coeffs)?,
        high_fidelity: Some(fields),
        pod: Some(basis),
        base: Arc::new(base),
        smagorinsky: None,
    })
}

pub fn coarse_config(cfg: &ExperimentConfig) -> BurgersConfig {
    BurgersConfig { nx: cfg.subgrid.coarse_nx, ..cfg.burgers.clone() }
}

fn subgrid(cfg: &ExperimentConfig, times: &[f64]) -> Result<Truth> {
    let fine = BurgersModel::new(cfg.burgers.clone(), 0.0)?;
    let fields = sample_model(&fine, &cfg.burgers.initial_condition(), times, &cfg.steppers.truth)?;
    let coarse_cfg = coarse_config(cfg);
    let (fx, cx) = (cfg.burgers.grid(), coarse_cfg.grid());
    let coarse = fields.iter().map(|u| restrict_to_coarse(u, &fx, &cx)).collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Truth {
        data: SnapshotDataset::new(times.to_vec(), coarse)?,
        high_fidelity: Some(fields),
        pod: None,
        base: Arc::new(BurgersModel::new(coarse_cfg.clone(), 0.0)?),
        smagorinsky: Some(Arc::new(BurgersModel::new(coarse_cfg, cfg.subgrid.smagorinsky_cs)?)),
    })
}

fn bio0d(cfg: &ExperimentConfig, times: &[f64]) -> Result<Truth> {
    let nnpzd = NnpzdModel { params: cfg.bio.clone() };
    let u0 = nnpzd_initial(cfg.bio.t_bio, cfg.init.p0, cfg.init.z0);
    let raw = sample_model(&nnpzd, &u0, times, &cfg.steppers.truth)?;
    let agg = raw.iter().map(|s| aggregate_nnpzd(s).to_vec()).collect();
    Ok(Truth {
        data: SnapshotDataset::new(times.to_vec(), agg)?,
        high_fidelity: Some(raw),
        pod: None,
        base: Arc::new(NpzModel { params: cfg.bio.clone() }),
        smagorinsky: None,
    })
}

fn bio1d(cfg: &ExperimentConfig, times: &[f64]) -> Result<Truth> {
    let truth_model = ColumnModel::new(cfg.column.clone(), cfg.bio.clone(), Ecosystem::Nnpzd)?;
    let u0 = truth_model.initial_state(cfg.init.p0, cfg.init.z0);
    let raw = sample_model(&truth_model, &u0, times, &cfg.steppers.truth)?;
    let agg = raw.iter().map(|s| s.chunks(5).flat_map(aggregate_nnpzd).collect()).collect();
    Ok(Truth {
        data: SnapshotDataset::new(times.to_vec(), agg)?,
        high_fidelity: Some(raw),
        pod: None,
        base: Arc::new(ColumnModel::new(cfg.column.clone(), cfg.bio.clone(), Ecosystem::Npz)?),
        smagorinsky: None,
    })
}

/// Generates the truth and builds the low-fidelity model(s).
pub fn generate(cfg: &ExperimentConfig) -> Result<Truth> {
    let times = data_times(cfg.spans.end(), cfg.spans.dt_data);
    match cfg.experiment {
        ExperimentKind::Toy => toy(cfg, &times),
        ExperimentKind::Exp1Rom => rom(cfg, &times),
        ExperimentKind::Exp2Subgrid => subgrid(cfg, &times),
        ExperimentKind::Exp3aBio0d => bio0d(cfg, &times),
        ExperimentKind::Exp3bBio1d => bio1d(cfg, &times),
    }
}

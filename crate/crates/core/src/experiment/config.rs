//! Experiment configuration: a TOML document merged over per-experiment
//! defaults and parsed strictly.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExperimentError, Result};
use crate::closure::ClosureKind;
use crate::integrate::StepperSpec;
use crate::models::bio::BioParams;
use crate::models::burgers::BurgersConfig;
use crate::models::column::ColumnConfig;
use crate::nn::ClosureFamily;
use crate::train::{BatchSpec, GradReduction, LossKind, LossSpec, LrSchedule, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Toy,
    Exp1Rom,
    Exp2Subgrid,
    Exp3aBio0d,
    Exp3bBio1d,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::Toy,
        ExperimentKind::Exp1Rom,
        ExperimentKind::Exp2Subgrid,
        ExperimentKind::Exp3aBio0d,
        ExperimentKind::Exp3bBio1d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Toy => "toy",
            ExperimentKind::Exp1Rom => "exp1_rom",
            ExperimentKind::Exp2Subgrid => "exp2_subgrid",
            ExperimentKind::Exp3aBio0d => "exp3a_bio0d",
            ExperimentKind::Exp3bBio1d => "exp3b_bio1d",
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ExperimentError::Config(format!("unknown experiment `{s}`")))
    }
}

/// Closure family plus the delay settings of every family; `kind` selects
/// which of them apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClosureConfig {
    pub kind: ClosureFamily,
    pub delays: Vec<f64>,
    pub tau1: f64,
    pub tau2: f64,
    pub quad_panels: usize,
    /// Start from an exactly zero closure output.
    pub zero_init: bool,
}

impl ClosureConfig {
    pub fn closure_kind(&self) -> ClosureKind {
        match self.kind {
            ClosureFamily::Markovian => ClosureKind::Markovian,
            ClosureFamily::Discrete => ClosureKind::Discrete { delays: self.delays.clone() },
            ClosureFamily::Distributed => {
                ClosureKind::Distributed { tau1: self.tau1, tau2: self.tau2, quad_panels: self.quad_panels }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Spans {
    pub train: [f64; 2],
    pub val: [f64; 2],
    pub predict: [f64; 2],
    pub dt_data: f64,
}

impl Spans {
    pub fn end(&self) -> f64 {
        self.predict[1]
    }

    /// `(name, [start, end])` for the three periods.
    pub fn windows(&self) -> [(&'static str, [f64; 2]); 3] {
        [("train", self.train), ("val", self.val), ("predict", self.predict)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Steppers {
    /// Truth-data generation.
    pub truth: StepperSpec,
    /// Model rollouts and training windows.
    pub forward: StepperSpec,
    /// Backward sweeps; the forward stepper when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjoint: Option<StepperSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub window_steps: usize,
    pub stride: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations_per_epoch: Option<usize>,
    pub lr0: f64,
    pub decay_rate: f64,
    pub decay_steps: usize,
    pub staircase: bool,
    pub rho: f64,
    pub eps: f64,
    pub reduction: GradReduction,
    pub positivity_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RomSection {
    pub n_modes: usize,
    /// End of the full-order run whose snapshots define the POD basis.
    pub pod_t_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubgridSection {
    pub coarse_nx: usize,
    pub smagorinsky_cs: f64,
}

/// Seeds for the biological initial conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    pub p0: f64,
    pub z0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Write a checkpoint every this many epochs (0: only the final one).
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub closure: ClosureConfig,
    pub spans: Spans,
    pub steppers: Steppers,
    pub train: TrainSection,
    pub burgers: BurgersConfig,
    pub rom: RomSection,
    pub subgrid: SubgridSection,
    pub bio: BioParams,
    pub column: ColumnConfig,
    pub init: InitSection,
    pub output: OutputSection,
}

fn multiples(step: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|k| (k as f64 * step * 1e6).round() / 1e6).collect()
}

impl ExperimentConfig {
    /// Settings of the given experiment and closure family.
    pub fn defaults(kind: ExperimentKind, family: ClosureFamily) -> Self {
        use ExperimentKind::*;
        let closure = |delays: Vec<f64>, tau2: f64| ClosureConfig {
            kind: family,
            delays,
            tau1: 0.0,
            tau2,
            quad_panels: 16,
            zero_init: true,
        };
        let spans = |train: [f64; 2], val: [f64; 2], predict: [f64; 2], dt_data: f64| Spans {
            train,
            val,
            predict,
            dt_data,
        };
        let train = |epochs, batch_size, lr0, decay_steps, positivity_weight| TrainSection {
            epochs,
            batch_size,
            window_steps: 6,
            stride: 2,
            iterations_per_epoch: None,
            lr0,
            decay_rate: 0.97,
            decay_steps,
            staircase: false,
            rho: 0.9,
            eps: 1e-7,
            reduction: GradReduction::Sum,
            positivity_weight,
        };
        let steppers = |truth_rtol: f64, dt: f64| Steppers {
            truth: StepperSpec::dopri(truth_rtol, truth_rtol * 1e-2),
            forward: StepperSpec::Rk4 { dt },
            adjoint: None,
        };
        let (closure, spans, steppers, train) = match kind {
            Toy => (
                closure(vec![0.1, 0.2], 0.2),
                spans([0.0, 4.0], [4.0, 6.0], [6.0, 10.0], 0.05),
                steppers(1e-9, 0.025),
                train(30, 4, 0.02, 10, 0.0),
            ),
            Exp1Rom => (
                closure(multiples(0.025, 6), 0.075),
                spans([0.0, 2.0], [2.0, 4.0], [4.0, 6.0], 0.01),
                steppers(1e-8, 0.005),
                train(200, 2, 0.075, 18, 0.0),
            ),
            Exp2Subgrid => (
                closure(multiples(0.025, 6), 0.075),
                spans([0.0, 1.25], [1.25, 2.5], [2.5, 5.0], 0.01),
                steppers(1e-8, 0.005),
                train(250, 8, 0.075, 4, 0.0),
            ),
            Exp3aBio0d => (
                closure(multiples(0.75, 6), 2.5),
                spans([0.0, 30.0], [30.0, 60.0], [60.0, 330.0], 0.05),
                steppers(1e-10, 0.025),
                train(350, 4, 0.05, 26, 1.0),
            ),
            Exp3bBio1d => {
                let (batch, decay) = if family == ClosureFamily::Distributed { (4, 14) } else { (8, 8) };
                (
                    closure(multiples(0.5, 4), 2.0),
                    spans([0.0, 30.0], [30.0, 60.0], [60.0, 364.0], 0.1),
                    steppers(1e-8, 0.05),
                    train(200, batch, 0.05, decay, 1.0),
                )
            }
        };
        Self {
            experiment: kind,
            seed: 0,
            closure,
            spans,
            steppers,
            train,
            burgers: BurgersConfig::default(),
            rom: RomSection { n_modes: 3, pod_t_end: 4.0 },
            subgrid: SubgridSection { coarse_nx: 25, smagorinsky_cs: 1.0 },
            bio: BioParams::default(),
            column: ColumnConfig::default(),
            init: InitSection { p0: 0.1, z0: 0.1 },
            output: OutputSection { dir: PathBuf::from("out"), checkpoint_every: 10 },
        }
    }

    /// Parses a TOML document. `experiment` (default `toy`) and
    /// `closure.kind` (default `discrete`) select the defaults; every other
    /// key overrides them. Tables are merged key by key, except tables with a
    /// `kind` key (stepper specs), which replace the default wholesale.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| ExperimentError::Config(e.to_string()))?;
        let kind: ExperimentKind = match user.get("experiment") {
            None => ExperimentKind::Toy,
            Some(toml::Value::String(s)) => s.parse()?,
            Some(_) => return Err(ExperimentError::Config("`experiment` must be a string".into())),
        };
        let family = match user.get("closure").and_then(|c| c.get("kind")) {
            None => ClosureFamily::Discrete,
            Some(v) => v.clone().try_into().map_err(|e: toml::de::Error| ExperimentError::Config(e.to_string()))?,
        };
        let defaults = Self::defaults(kind, family);
        let mut merged = toml::Table::try_from(&defaults).map_err(|e| ExperimentError::Config(e.to_string()))?;
        merge(&mut merged, user);
        let cfg: Self =
            toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        let s = &self.spans;
        let ordered = |w: [f64; 2]| w[0] < w[1];
        if !(ordered(s.train) && ordered(s.val) && ordered(s.predict)) {
            return bad("each span must have start < end".into());
        }
        if !(s.train[0] >= 0.0 && s.train[1] <= s.val[0] && s.val[1] <= s.predict[0]) {
            return bad("spans must be ordered train < val < predict, starting at t >= 0".into());
        }
        if !(s.dt_data > 0.0) {
            return bad("dt_data must be positive".into());
        }
        for w in [s.train, s.val, s.predict] {
            for t in w {
                let k = t / s.dt_data;
                if (k - k.round()).abs() > 1e-6 {
                    return bad(format!("span boundary {t} is not a multiple of dt_data {}", s.dt_data));
                }
            }
        }
        self.closure.closure_kind().validate()?;
        self.steppers.truth.validate()?;
        self.steppers.forward.validate()?;
        if let Some(a) = &self.steppers.adjoint {
            a.validate()?;
        }
        self.burgers.validate()?;
        self.bio.validate()?;
        self.column.validate()?;
        if self.rom.n_modes == 0 || !(self.rom.pod_t_end > 0.0) {
            return bad("rom needs at least one mode and a positive snapshot horizon".into());
        }
        if self.subgrid.coarse_nx < 3 || !(self.subgrid.smagorinsky_cs >= 0.0) {
            return bad("subgrid needs at least 3 coarse nodes and C_s >= 0".into());
        }
        if self.experiment == ExperimentKind::Exp1Rom && self.rom.n_modes != 3 {
            return bad("the experiment-1 closure networks expect three modes".into());
        }
        if self.experiment == ExperimentKind::Exp2Subgrid && self.subgrid.coarse_nx != 25 {
            return bad("the experiment-2 closure networks expect 25 coarse nodes".into());
        }
        if self.experiment == ExperimentKind::Exp3bBio1d && self.column.nz != 20 {
            return bad("the experiment-3b closure networks expect 20 depth cells".into());
        }
        if !(self.init.p0 >= 0.0 && self.init.z0 >= 0.0) {
            return bad("initial seeds must be non-negative".into());
        }
        self.train_config().validate()?;
        Ok(())
    }

    pub fn loss_spec(&self) -> LossSpec {
        let kind = match self.experiment {
            ExperimentKind::Exp3bBio1d => LossKind::DepthAvgL2 { channels: 3 },
            _ => LossKind::TimeAvgL2,
        };
        LossSpec { kind, positivity_weight: self.train.positivity_weight }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch: BatchSpec { batch_size: t.batch_size, window_steps: t.window_steps, stride: t.stride },
            iterations_per_epoch: t.iterations_per_epoch,
            schedule: LrSchedule {
                lr0: t.lr0,
                decay_rate: t.decay_rate,
                decay_steps: t.decay_steps,
                staircase: t.staircase,
            },
            rho: t.rho,
            eps: t.eps,
            loss: self.loss_spec(),
            reduction: t.reduction,
            train_span: (self.spans.train[0], self.spans.train[1]),
            val_span: (self.spans.val[0], self.spans.val[1]),
            forward: self.steppers.forward.clone(),
            adjoint: self.steppers.adjoint.clone(),
        }
    }

    /// SHA-256 of everything that determines a training trajectory except
    /// the epoch budget and output settings, so a run can be extended.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.train.epochs = 0;
        c.output = OutputSection { dir: PathBuf::new(), checkpoint_every: 0 };
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if !o.contains_key("kind") || k == "closure" => {
                merge(b, o)
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

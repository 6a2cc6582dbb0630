//! Python bindings: experiments (truth, training, evaluation, checkpoints)
//! and a few standalone helpers.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use neural_closure::experiment::{self as ex, Checkpoint, ExperimentConfig, ExperimentError, ExperimentKind};
use neural_closure::nn::ClosureFamily;
use neural_closure::train::{self, EpochRecord, LrSchedule, TrainState};

fn to_py(e: ExperimentError) -> PyErr {
    match e {
        ExperimentError::Config(_) | ExperimentError::Checkpoint(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn family(name: &str) -> PyResult<ClosureFamily> {
    ClosureFamily::ALL
        .into_iter()
        .find(|f| f.name() == name)
        .ok_or_else(|| PyValueError::new_err(format!("unknown closure kind `{name}`")))
}

fn record<'py>(py: Python<'py>, r: &EpochRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("epoch", r.epoch)?;
    d.set_item("train_loss", r.train_loss)?;
    d.set_item("val_loss", r.val_loss)?;
    d.set_item("batch_loss", r.batch_loss)?;
    d.set_item("lr", r.lr)?;
    Ok(d)
}

/// A configured experiment together with its training state.
#[pyclass(name = "Experiment", module = "nclosure_py")]
struct PyExperiment {
    exp: ex::Experiment,
    state: TrainState,
    history: Vec<EpochRecord>,
}

impl PyExperiment {
    fn from_config(cfg: ExperimentConfig) -> PyResult<Self> {
        let exp = ex::Experiment::new(cfg).map_err(to_py)?;
        let state = exp.initial_state();
        Ok(Self { exp, state, history: Vec::new() })
    }
}

#[pymethods]
impl PyExperiment {
    /// Defaults of `experiment` with the given closure family.
    #[new]
    #[pyo3(signature = (experiment = "toy", closure = "discrete", seed = None))]
    fn new(experiment: &str, closure: &str, seed: Option<u64>) -> PyResult<Self> {
        let kind: ExperimentKind = experiment.parse().map_err(to_py)?;
        let mut cfg = ExperimentConfig::defaults(kind, family(closure)?);
        if let Some(s) = seed {
            cfg.seed = s;
        }
        Self::from_config(cfg)
    }

    /// Builds an experiment from TOML configuration text.
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Self::from_config(ExperimentConfig::from_toml(text).map_err(to_py)?)
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.exp.cfg.experiment.name()
    }

    #[getter]
    fn config_toml(&self) -> String {
        self.exp.cfg.to_toml()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.exp.truth.data.times().to_vec()
    }

    #[getter]
    fn truth(&self) -> Vec<Vec<f64>> {
        self.exp.truth.data.states().to_vec()
    }

    #[getter]
    fn n_theta(&self) -> usize {
        self.exp.sys.closure.n_theta()
    }

    #[getter]
    fn n_phi(&self) -> usize {
        self.exp.sys.closure.n_phi()
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.state.epoch
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.state.params.clone()
    }

    #[getter]
    fn history<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.history.iter().map(|r| record(py, r)).collect()
    }

    /// Trains for `epochs` more epochs (default: up to the configured
    /// budget) and returns the new loss records.
    #[pyo3(signature = (epochs = None))]
    fn train<'py>(&mut self, py: Python<'py>, epochs: Option<usize>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        if let Some(n) = epochs {
            self.exp.cfg.train.epochs = self.state.epoch + n;
        }
        let (exp, state) = (&self.exp, &mut self.state);
        let new = py.detach(|| exp.train(state, |_, _| {})).map_err(to_py)?;
        self.history.extend(new.iter().cloned());
        new.iter().map(|r| record(py, r)).collect()
    }

    /// Rollouts from `t = 0` of the baseline, the closure (current or given
    /// parameters) and, for the subgrid experiment, the Smagorinsky model.
    #[pyo3(signature = (params = None))]
    fn evaluate<'py>(&self, py: Python<'py>, params: Option<Vec<f64>>) -> PyResult<Bound<'py, PyDict>> {
        let p = params.unwrap_or_else(|| self.state.params.clone());
        if p.len() != self.exp.sys.n_params() {
            return Err(PyValueError::new_err(format!(
                "expected {} parameters, got {}",
                self.exp.sys.n_params(),
                p.len()
            )));
        }
        let exp = &self.exp;
        let ev = py.detach(|| ex::evaluate(exp, &p)).map_err(to_py)?;
        let out = PyDict::new(py);
        out.set_item("times", &ev.times)?;
        out.set_item("truth", &ev.truth)?;
        let runs = PyDict::new(py);
        for r in &ev.runs {
            let d = PyDict::new(py);
            d.set_item("states", &r.states)?;
            d.set_item("rmse", &r.rmse)?;
            let windows = PyDict::new(py);
            for w in &r.windows {
                let m = PyDict::new(py);
                m.set_item("l2", w.l2)?;
                m.set_item("mean_rmse", w.mean_rmse)?;
                m.set_item("crosscorr", w.crosscorr)?;
                windows.set_item(&w.window, m)?;
            }
            d.set_item("windows", windows)?;
            runs.set_item(&r.name, d)?;
        }
        out.set_item("runs", runs)?;
        Ok(out)
    }

    fn save_checkpoint(&self, path: std::path::PathBuf) -> PyResult<()> {
        self.exp.checkpoint(&self.state, &self.history).save(&path).map_err(to_py)
    }

    /// Restores the training state; the configuration must match.
    fn load_checkpoint(&mut self, path: std::path::PathBuf) -> PyResult<()> {
        let ck = Checkpoint::load(&path).map_err(to_py)?;
        let mut cfg = self.exp.cfg.clone();
        cfg.train.epochs = self.exp.cfg.train.epochs.max(ck.state.epoch);
        let state = ck.resume_state(&self.exp).map_err(to_py)?;
        self.exp.cfg = cfg;
        self.state = state;
        self.history = ck.history;
        Ok(())
    }

    fn __repr__(&self) -> String {
        format!(
            "Experiment({}, closure={}, params={}, epoch={})",
            self.exp.cfg.experiment.name(),
            self.exp.cfg.closure.kind.name(),
            self.exp.sys.n_params(),
            self.state.epoch
        )
    }
}

/// Adjoint versus finite-difference gradient checks on the toy problem.
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn verify_gradients<'py>(py: Python<'py>, seed: u64) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let checks = py.detach(|| ex::verify_gradients(seed)).map_err(to_py)?;
    checks
        .iter()
        .map(|c| {
            let d = PyDict::new(py);
            d.set_item("closure", &c.label)?;
            d.set_item("n_params", c.n_params)?;
            d.set_item("rel_error", c.rel_error)?;
            Ok(d)
        })
        .collect()
}

#[pyfunction]
fn iterations_per_epoch(n_steps: usize, batch_size: usize, window_steps: usize) -> usize {
    train::iterations_per_epoch(n_steps, batch_size, window_steps)
}

#[pyfunction]
#[pyo3(signature = (step, lr0, decay_rate, decay_steps, staircase = false))]
fn lr_at(step: u64, lr0: f64, decay_rate: f64, decay_steps: usize, staircase: bool) -> f64 {
    train::lr_at(step, &LrSchedule { lr0, decay_rate, decay_steps, staircase })
}

/// `(min, q1, median, q3, max)`, or `None` for no values.
#[pyfunction]
fn five_number_summary(values: Vec<f64>) -> Option<(f64, f64, f64, f64, f64)> {
    ex::five_number_summary(&values).map(|s| (s.min, s.q1, s.median, s.q3, s.max))
}

#[pyfunction]
fn experiments() -> Vec<&'static str> {
    ExperimentKind::ALL.iter().map(|k| k.name()).collect()
}

#[pymodule]
pub fn nclosure_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyExperiment>()?;
    m.add_function(wrap_pyfunction!(verify_gradients, m)?)?;
    m.add_function(wrap_pyfunction!(iterations_per_epoch, m)?)?;
    m.add_function(wrap_pyfunction!(lr_at, m)?)?;
    m.add_function(wrap_pyfunction!(five_number_summary, m)?)?;
    m.add_function(wrap_pyfunction!(experiments, m)?)?;
    Ok(())
}

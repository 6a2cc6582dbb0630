//! CSV files: header row, comma separated, floats with 17 significant digits.

use std::path::Path;

use super::{Evaluation, ExperimentConfig, ExperimentKind, Result, SweepReport, Truth};
use crate::train::EpochRecord;

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Column names of the low-fidelity state.
pub fn state_labels(cfg: &ExperimentConfig) -> Vec<String> {
    match cfg.experiment {
        ExperimentKind::Toy => vec!["u0".into(), "u1".into()],
        ExperimentKind::Exp1Rom => (1..=cfg.rom.n_modes).map(|k| format!("a{k}")).collect(),
        ExperimentKind::Exp2Subgrid => (0..cfg.subgrid.coarse_nx).map(|k| format!("u_{k}")).collect(),
        ExperimentKind::Exp3aBio0d => vec!["N".into(), "P".into(), "Z".into()],
        ExperimentKind::Exp3bBio1d => {
            (0..cfg.column.nz).flat_map(|k| ["N", "P", "Z"].map(|s| format!("{s}_{k}"))).collect()
        }
    }
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(csv::Writer::from_path(path)?)
}

/// `t` followed by one column per state entry.
pub fn write_trajectory_csv(path: &Path, labels: &[String], times: &[f64], states: &[Vec<f64>]) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["t".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header)?;
    for (t, s) in times.iter().zip(states) {
        let mut row = vec![num(*t)];
        row.extend(s.iter().map(|&x| num(x)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `truth.csv` and the experiment's extra files into `dir`; returns
/// the paths written.
pub fn write_truth(dir: &Path, cfg: &ExperimentConfig, truth: &Truth) -> Result<Vec<std::path::PathBuf>> {
    let mut written = Vec::new();
    let d = &truth.data;
    let p = dir.join("truth.csv");
    write_trajectory_csv(&p, &state_labels(cfg), d.times(), d.states())?;
    written.push(p);
    match cfg.experiment {
        ExperimentKind::Exp1Rom => {
            if let Some(basis) = &truth.pod {
                let p = dir.join("pod_basis.csv");
                let mut w = writer(&p)?;
                let mut header = vec!["x".to_string(), "mean".to_string()];
                header.extend((1..=basis.n_modes()).map(|k| format!("mode{k}")));
                w.write_record(&header)?;
                for (i, x) in cfg.burgers.grid().into_iter().enumerate() {
                    let mut row = vec![num(x), num(basis.mean[i])];
                    row.extend(basis.modes.iter().map(|m| num(m[i])));
                    w.write_record(&row)?;
                }
                w.flush()?;
                written.push(p);

                let p = dir.join("pod_singular_values.csv");
                let mut w = writer(&p)?;
                w.write_record(["index", "sigma", "energy_fraction", "amplitude_fraction"])?;
                for (k, s) in basis.sigma.iter().enumerate() {
                    w.write_record([
                        (k + 1).to_string(),
                        num(*s),
                        num(basis.energy_fraction(k + 1)),
                        num(basis.amplitude_fraction(k + 1)),
                    ])?;
                }
                w.flush()?;
                written.push(p);
            }
            if let Some(hf) = &truth.high_fidelity {
                let p = dir.join("fom_fields.csv");
                let labels: Vec<String> = (0..cfg.burgers.nx).map(|k| format!("u_{k}")).collect();
                write_trajectory_csv(&p, &labels, d.times(), hf)?;
                written.push(p);
            }
        }
        ExperimentKind::Exp2Subgrid => {
            if let Some(hf) = &truth.high_fidelity {
                let p = dir.join("fine_fields.csv");
                let labels: Vec<String> = (0..cfg.burgers.nx).map(|k| format!("u_{k}")).collect();
                write_trajectory_csv(&p, &labels, d.times(), hf)?;
                written.push(p);
            }
        }
        ExperimentKind::Exp3aBio0d => {
            if let Some(hf) = &truth.high_fidelity {
                let p = dir.join("nnpzd.csv");
                let labels = ["NO3", "NH4", "P", "Z", "D"].map(String::from);
                write_trajectory_csv(&p, &labels, d.times(), hf)?;
                written.push(p);
            }
        }
        ExperimentKind::Exp3bBio1d => {
            if let Some(hf) = &truth.high_fidelity {
                let p = dir.join("nnpzd_column.csv");
                let labels: Vec<String> = (0..cfg.column.nz)
                    .flat_map(|k| ["NO3", "NH4", "P", "Z", "D"].map(|s| format!("{s}_{k}")))
                    .collect();
                write_trajectory_csv(&p, &labels, d.times(), hf)?;
                written.push(p);
            }
        }
        ExperimentKind::Toy => {}
    }
    Ok(written)
}

/// `epoch, train_loss, val_loss, lr, batch_loss`
pub fn write_loss_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["epoch", "train_loss", "val_loss", "lr", "batch_loss"])?;
    for r in history {
        w.write_record([r.epoch.to_string(), num(r.train_loss), num(r.val_loss), num(r.lr), opt(r.batch_loss)])?;
    }
    w.flush()?;
    Ok(())
}

/// `trajectories.csv`, `rmse.csv` and `metrics.csv` in `dir`.
pub fn write_evaluation(dir: &Path, cfg: &ExperimentConfig, ev: &Evaluation) -> Result<()> {
    let labels = state_labels(cfg);
    let mut w = writer(&dir.join("trajectories.csv"))?;
    let mut header = vec!["t".to_string(), "window".to_string()];
    for name in std::iter::once("truth").chain(ev.runs.iter().map(|r| r.name.as_str())) {
        header.extend(labels.iter().map(|l| format!("{name}_{l}")));
    }
    w.write_record(&header)?;
    for (i, &t) in ev.times.iter().enumerate() {
        let mut row = vec![num(t), Evaluation::window_of(cfg, t).to_string()];
        row.extend(ev.truth[i].iter().map(|&x| num(x)));
        for r in &ev.runs {
            row.extend(r.states[i].iter().map(|&x| num(x)));
        }
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = writer(&dir.join("rmse.csv"))?;
    let mut header = vec!["t".to_string(), "window".to_string()];
    header.extend(ev.runs.iter().map(|r| r.name.clone()));
    w.write_record(&header)?;
    for (i, &t) in ev.times.iter().enumerate() {
        let mut row = vec![num(t), Evaluation::window_of(cfg, t).to_string()];
        row.extend(ev.runs.iter().map(|r| num(r.rmse[i])));
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = writer(&dir.join("metrics.csv"))?;
    w.write_record(["model", "window", "l2_error", "mean_rmse", "crosscorr"])?;
    for r in &ev.runs {
        for m in &r.windows {
            w.write_record([r.name.clone(), m.window.clone(), num(m.l2), num(m.mean_rmse), opt(m.crosscorr)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `sweep_runs.csv` and `sweep_summary.csv` in `dir`.
pub fn write_sweep(dir: &Path, report: &SweepReport) -> Result<()> {
    let mut w = writer(&dir.join("sweep_runs.csv"))?;
    w.write_record(["tau2", "repeat", "seed", "status", "final_val_loss", "detail"])?;
    for r in &report.runs {
        let (status, detail) = match &r.status {
            super::RunStatus::Ok => ("ok", String::new()),
            super::RunStatus::Diverged(d) => ("diverged", d.clone()),
        };
        w.write_record([num(r.tau2), r.repeat.to_string(), r.seed.to_string(), status.into(), opt(r.final_val_loss), detail])?;
    }
    w.flush()?;

    let mut w = writer(&dir.join("sweep_summary.csv"))?;
    w.write_record(["tau2", "runs", "min", "q1", "median", "q3", "max"])?;
    for (tau2, n, s) in &report.summaries {
        let f = |g: fn(&super::FiveNumber) -> f64| opt(s.as_ref().map(g));
        w.write_record([
            num(*tau2),
            n.to_string(),
            f(|s| s.min),
            f(|s| s.q1),
            f(|s| s.median),
            f(|s| s.q3),
            f(|s| s.max),
        ])?;
    }
    w.flush()?;
    Ok(())
}

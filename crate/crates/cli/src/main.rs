//! `nclosure`: generate truth data, train and evaluate neural closure
//! models, check adjoint gradients and sweep distributed delays.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use neural_closure::experiment::{
    evaluate, sweep_delay, verify_gradients, write_evaluation, write_loss_history, write_sweep, write_truth,
    Checkpoint, Experiment, ExperimentConfig, ExperimentError, ExperimentKind, RunStatus,
};
use neural_closure::nn::ClosureFamily;

/// Largest accepted relative adjoint error in `verify-gradients`.
const GRADIENT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "nclosure", version, about = "Neural delay-differential closure models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the truth snapshots (and experiment-specific extras).
    GenData(Common),
    /// Train a closure; writes loss history and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        /// Resume from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Roll out baseline and closure models across all periods.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Trained parameters; the untrained closure is used when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare adjoint and finite-difference gradients on the toy problem.
    VerifyGradients {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write `gradient_check.csv` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train distributed closures over a grid of window lengths.
    SweepDelay {
        #[command(flatten)]
        common: Common,
        /// Comma-separated τ₂ values (τ₁ = 0).
        #[arg(long, value_delimiter = ',', required = true)]
        tau2: Vec<f64>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Experiment to use with default settings when no file is given.
    #[arg(long, conflicts_with = "config")]
    experiment: Option<ExperimentKind>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Failed(String),
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_)
            | CliError::Failed(_)
            | CliError::Experiment(ExperimentError::Config(_) | ExperimentError::Checkpoint(_)) => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, self.experiment) {
            (Some(path), _) => {
                let text =
                    std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.clone(), source })?;
                ExperimentConfig::from_toml(&text)?
            }
            (None, Some(kind)) => ExperimentConfig::defaults(kind, ClosureFamily::Discrete),
            (None, None) => return Err(CliError::Invalid("pass --config or --experiment".into())),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn save_config(cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.output.dir).map_err(ExperimentError::from)?;
    std::fs::write(cfg.output.dir.join("config.toml"), cfg.to_toml()).map_err(ExperimentError::from)?;
    Ok(())
}

fn gen_data(common: &Common) -> Result<()> {
    let cfg = common.load()?;
    let exp = Experiment::new(cfg)?;
    save_config(&exp.cfg)?;
    for path in write_truth(&exp.cfg.output.dir, &exp.cfg, &exp.truth)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn train(common: &Common, checkpoint: Option<&Path>) -> Result<()> {
    let exp = Experiment::new(common.load()?)?;
    let dir = exp.cfg.output.dir.clone();
    let (mut state, mut history) = match checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            (ck.resume_state(&exp)?, ck.history)
        }
        None => (exp.initial_state(), Vec::new()),
    };
    save_config(&exp.cfg)?;
    let every = exp.cfg.output.checkpoint_every;
    println!("epoch,train_loss,val_loss,lr,batch_loss");
    let mut saved = Ok(());
    let mut so_far = history.clone();
    let new = exp.train(&mut state, |r, st| {
        let batch = r.batch_loss.map(|b| format!("{b:.6e}")).unwrap_or_default();
        println!("{},{:.6e},{:.6e},{:.6e},{batch}", r.epoch, r.train_loss, r.val_loss, r.lr);
        so_far.push(r.clone());
        if every > 0 && r.epoch > 0 && r.epoch % every == 0 && saved.is_ok() {
            saved = exp.checkpoint(st, &so_far).save(&dir.join(format!("checkpoint_{:05}.json", r.epoch)));
        }
    })?;
    saved?;
    history.extend(new);
    write_loss_history(&dir.join("loss_history.csv"), &history)?;
    let path = dir.join("checkpoint.json");
    exp.checkpoint(&state, &history).save(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn evaluate_cmd(common: &Common, checkpoint: Option<&Path>) -> Result<()> {
    let exp = Experiment::new(common.load()?)?;
    let params = match checkpoint {
        Some(path) => Checkpoint::load(path)?.params_for(&exp)?.to_vec(),
        None => exp.initial_params(),
    };
    let ev = evaluate(&exp, &params)?;
    write_evaluation(&exp.cfg.output.dir, &exp.cfg, &ev)?;
    println!("model,window,l2_error,mean_rmse,crosscorr");
    for run in &ev.runs {
        for w in &run.windows {
            let cc = w.crosscorr.map(|c| format!("{c:.6}")).unwrap_or_default();
            println!("{},{},{:.6e},{:.6e},{cc}", run.name, w.window, w.l2, w.mean_rmse);
        }
    }
    Ok(())
}

fn verify(seed: u64, out: Option<&Path>) -> Result<()> {
    let checks = verify_gradients(seed)?;
    let mut worst: f64 = 0.0;
    for c in &checks {
        println!("{:<24} {:>4} params  relative error {:.3e}", c.label, c.n_params, c.rel_error);
        worst = worst.max(c.rel_error);
    }
    println!("max relative error {worst:.3e}");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(ExperimentError::from)?;
        let mut text = String::from("closure,n_params,rel_error\n");
        for c in &checks {
            text.push_str(&format!("{},{},{:.16e}\n", c.label, c.n_params, c.rel_error));
        }
        std::fs::write(dir.join("gradient_check.csv"), text).map_err(ExperimentError::from)?;
    }
    if checks.iter().any(|c| !(c.rel_error < GRADIENT_TOLERANCE)) {
        return Err(CliError::Failed(format!("gradient error {worst:.3e} exceeds {GRADIENT_TOLERANCE:e}")));
    }
    Ok(())
}

fn sweep(common: &Common, tau2: &[f64], repeats: usize) -> Result<()> {
    if repeats == 0 {
        return Err(CliError::Invalid("--repeats must be positive".into()));
    }
    let exp = Experiment::new(common.load()?)?;
    save_config(&exp.cfg)?;
    let report = sweep_delay(&exp, tau2, repeats)?;
    write_sweep(&exp.cfg.output.dir, &report)?;
    for r in &report.runs {
        match &r.status {
            RunStatus::Ok => println!("tau2 {} repeat {}: {:.6e}", r.tau2, r.repeat, r.final_val_loss.unwrap_or(f64::NAN)),
            RunStatus::Diverged(d) => println!("tau2 {} repeat {}: diverged ({d})", r.tau2, r.repeat),
        }
    }
    println!("wrote {}", exp.cfg.output.dir.join("sweep_summary.csv").display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(common) => gen_data(common),
        Command::Train { common, checkpoint } => train(common, checkpoint.as_deref()),
        Command::Evaluate { common, checkpoint } => evaluate_cmd(common, checkpoint.as_deref()),
        Command::VerifyGradients { seed, out } => verify(*seed, out.as_deref()),
        Command::SweepDelay { common, tau2, repeats } => sweep(common, tau2, *repeats),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

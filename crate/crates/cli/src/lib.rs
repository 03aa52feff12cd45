//! `sbp`: experiment runner for the neural and grid Schrödinger bridge
//! solvers. Every verb reads an experiment config, writes plain-text
//! artifacts into `--out` and finishes with a run manifest.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use config::ExperimentConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "sbp", version, about = "Schrödinger bridge experiments")]
pub struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the field network.
    Train,
    /// Solve the discretized problem on a grid.
    GridSolve,
    /// Fit the score network from a trained field and dump the drift.
    RecoverDrift {
        /// Field checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare two solved tracks on a window.
    Compare {
        /// `recover-drift` output directory (or a grid directory).
        #[arg(long)]
        neural: PathBuf,
        /// `grid-solve` output directory (or a neural directory).
        #[arg(long)]
        grid: PathBuf,
        /// Evaluation window `lo,hi`.
        #[arg(long, value_parser = parse_window, allow_hyphen_values = true)]
        window: Option<[f64; 2]>,
    },
    /// Train and evaluate over a list of alpha or sigma values.
    Sweep,
    /// Sample ODE and SDE paths from a trained field.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Score checkpoint from `recover-drift`; needed for SDE paths when
        /// sigma > 0.
        #[arg(long)]
        score: Option<PathBuf>,
    },
}

fn parse_window(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    let [lo, hi] = parts.as_slice() else {
        return Err(format!("expected lo,hi, got `{s}`"));
    };
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    let (lo, hi) = (p(lo)?, p(hi)?);
    if !(lo < hi) {
        return Err(format!("need lo < hi, got {lo},{hi}"));
    }
    Ok([lo, hi])
}

fn resolve(cli: &Cli) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => match cli.command {
            Command::Compare { .. } => ExperimentConfig::preset(config::Experiment::Gmm1d),
            _ => return Err(CliError::Config("--config is required".into())),
        },
    };
    if let Some(s) = cli.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(w) = cli.workers {
        cfg = cfg.with_workers(w);
    }
    cfg.validate()?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| CliError::Config("out: no output directory (use --out)".into()))?;
    Ok((cfg, out))
}

/// Runs one verb and returns the path of its summary artifact.
pub fn run(cli: &Cli) -> Result<PathBuf, CliError> {
    let (cfg, out) = resolve(cli)?;
    let out: &Path = &out;
    match &cli.command {
        Command::Train => {
            commands::train::cmd_train(&cfg, out)?;
        }
        Command::GridSolve => {
            commands::grid::cmd_grid_solve(&cfg, out)?;
        }
        Command::RecoverDrift { checkpoint } => {
            commands::recover::cmd_recover_drift(&cfg, checkpoint, out)?;
        }
        Command::Compare {
            neural,
            grid,
            window,
        } => {
            let w = window.unwrap_or(cfg.compare.window);
            commands::compare::cmd_compare(&cfg, neural, grid, w, out)?;
            return Ok(out.join("report.json"));
        }
        Command::Sweep => {
            commands::sweep::cmd_sweep(&cfg, out)?;
            return Ok(out.join("sweep_summary.csv"));
        }
        Command::Sample { checkpoint, score } => {
            commands::sample::cmd_sample(&cfg, checkpoint, score.as_deref(), out)?;
        }
    }
    Ok(out.join(commands::SUMMARY_FILE))
}

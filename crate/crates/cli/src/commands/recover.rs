use std::fs;
use std::path::Path;

use sbp_core::nn::{Checkpoint, ParamVector};
use sbp_core::score::{
    generate_trajectory_dataset, recover_drift, train_score, write_drift_csv,
    write_score_history_csv, RecoveredDrift, ScoreMode,
};
use serde::{Deserialize, Serialize};

use super::{
    create_dir, lattice, load_net, mean, write_json, FIELD_FILE, SCORE_FILE, SUMMARY_FILE,
    TRAIN_SUMMARY_FILE,
};
use crate::config::{ExperimentConfig, SeedTag};
use crate::error::CliError;
use crate::manifest::Manifest;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoverSummary {
    pub mode: ScoreMode,
    pub sigma: f64,
    pub n_paths: usize,
    pub dropped_paths: usize,
    pub iterations: usize,
    /// Mean loss over the last 50 iterations.
    pub final_loss: f64,
    pub drift_points: usize,
    pub drift_times: usize,
}

pub struct Recovered {
    pub drift: RecoveredDrift,
    pub history: Vec<f64>,
    pub dropped: usize,
}

/// Generates the trajectory dataset from `f` and fits the second network.
pub fn recover(cfg: &ExperimentConfig, f: &ParamVector) -> Result<Recovered, CliError> {
    let sc = &cfg.score;
    sc.validate()?;
    let prior = cfg.prior();
    if prior.is_some() && sc.mode == ScoreMode::ParameterizeDrift {
        return Err(CliError::Config(
            "score.mode: parameterize_drift does not support a prior potential; use parameterize_score"
                .into(),
        ));
    }
    let data = generate_trajectory_dataset(
        f,
        prior.as_ref(),
        cfg.train.terminal.as_ref(),
        sc.n_paths,
        sc.grid()?,
        cfg.sub_seed(SeedTag::Paths),
        sc.workers,
    )?;
    let out = train_score(f, sc, &data)?;
    let drift = recover_drift(f, &out.params, sc.sigma, sc.mode)?;
    Ok(Recovered {
        drift,
        history: out.history,
        dropped: data.dropped,
    })
}

/// Points per axis of the drift dump.
fn dump_points(cfg: &ExperimentConfig) -> usize {
    if cfg.dim() == 1 {
        cfg.compare.points
    } else {
        cfg.compare.points.min(41)
    }
}

/// `score.json`, `score_history.csv`, `drift.csv` on the grid domain times
/// the score time nodes, a copy of the field checkpoint (and of its
/// training summary, when present), `summary.json`, `config.toml`,
/// `manifest.json`.
pub fn cmd_recover_drift(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    out: &Path,
) -> Result<RecoverSummary, CliError> {
    create_dir(out)?;
    let mut manifest = Manifest::new("recover-drift", cfg)?;
    manifest.add_input(checkpoint)?;
    let f = load_net(checkpoint, cfg.dim())?;
    let r = recover(cfg, &f)?;
    Checkpoint::new(
        Some(cfg.score.net.clone()),
        &r.drift.net,
        cfg.score.seed,
        cfg.score.iterations as u64,
    )
    .save(&out.join(SCORE_FILE))?;
    write_score_history_csv(&out.join("score_history.csv"), &r.history)?;
    let n = dump_points(cfg);
    let points = lattice(cfg.dim(), cfg.grid.lo, cfg.grid.hi, n);
    let times = cfg.score.grid()?.nodes();
    write_drift_csv(&out.join("drift.csv"), &r.drift, &points, &times)?;
    let field_copy = out.join(FIELD_FILE);
    if fs::canonicalize(checkpoint).ok() != fs::canonicalize(&field_copy).ok() {
        fs::copy(checkpoint, &field_copy)?;
    }
    if let Some(dir) = checkpoint.parent() {
        let s = dir.join(SUMMARY_FILE);
        if s.is_file() {
            fs::copy(&s, out.join(TRAIN_SUMMARY_FILE))?;
        }
    }
    let tail = &r.history[r.history.len().saturating_sub(50)..];
    let summary = RecoverSummary {
        mode: cfg.score.mode,
        sigma: cfg.score.sigma,
        n_paths: cfg.score.n_paths,
        dropped_paths: r.dropped,
        iterations: r.history.len(),
        final_loss: mean(tail),
        drift_points: points.len() / cfg.dim(),
        drift_times: times.len(),
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    manifest.finish(out)?;
    Ok(summary)
}

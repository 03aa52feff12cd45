use std::path::Path;

use sbp_core::grid::{solve, write_fields_csv, write_metrics_csv, GridSpec, GridState, SolveReport};
use serde::{Deserialize, Serialize};

use super::{create_dir, read_json, write_json, GRID_STATE_FILE, SUMMARY_FILE};
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::manifest::Manifest;

/// Solved grid track: everything `compare` needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridArtifact {
    pub spec: GridSpec,
    pub state: GridState,
    pub objective: f64,
}

impl GridArtifact {
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        read_json(&dir.join(GRID_STATE_FILE))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_residual: f64,
    pub nx: usize,
    pub nt: usize,
    pub lo: f64,
    pub hi: f64,
    pub sigma: f64,
    pub clamped_cells: usize,
    pub max_cubic_residual: f64,
}

pub fn solve_config(cfg: &ExperimentConfig) -> Result<(GridSpec, SolveReport), CliError> {
    let spec = cfg.grid_spec();
    spec.validate()?;
    let (rho0, rho1) = cfg.grid_densities(&spec)?;
    let report = solve(&rho0, &rho1, &spec)?;
    Ok((spec, report))
}

pub fn summarize(spec: &GridSpec, r: &SolveReport) -> GridSummary {
    GridSummary {
        objective: r.objective,
        iterations: r.iterations,
        converged: r.converged,
        final_residual: r.residuals.last().copied().unwrap_or(f64::NAN),
        nx: spec.nx,
        nt: spec.nt,
        lo: spec.lo,
        hi: spec.hi,
        sigma: spec.sigma,
        clamped_cells: r.stats.clamped,
        max_cubic_residual: r.stats.max_cubic_residual,
    }
}

/// `fields/fields_tNNNN.csv`, `metrics.csv`, `grid_state.json`,
/// `summary.json`, `config.toml`, `manifest.json`.
pub fn cmd_grid_solve(cfg: &ExperimentConfig, out: &Path) -> Result<GridSummary, CliError> {
    create_dir(out)?;
    let manifest = Manifest::new("grid-solve", cfg)?;
    let (spec, report) = solve_config(cfg)?;
    write_outputs(out, &spec, &report)?;
    let summary = summarize(&spec, &report);
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    manifest.finish(out)?;
    Ok(summary)
}

pub(crate) fn write_outputs(out: &Path, spec: &GridSpec, r: &SolveReport) -> Result<(), CliError> {
    write_fields_csv(&out.join("fields"), spec, &r.state)?;
    write_metrics_csv(&out.join("metrics.csv"), r)?;
    write_json(
        &out.join(GRID_STATE_FILE),
        &GridArtifact {
            spec: spec.clone(),
            state: r.state.clone(),
            objective: r.objective,
        },
    )
}

use std::path::Path;

use sbp_core::grid::{reference_drift, reference_score, MaskedField};
use sbp_core::nn::{eval_field, ParamVector};
use sbp_core::score::{recover_drift, RecoveredDrift};
use serde::{Deserialize, Serialize};

use super::grid::GridArtifact;
use super::train::{KlSummary, TrainSummary};
use super::{
    create_dir, lattice, load_net, read_json, write_json, FIELD_FILE, GRID_STATE_FILE,
    SCORE_FILE, TRAIN_SUMMARY_FILE,
};
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::manifest::{Manifest, CONFIG_FILE};

/// One side of a comparison: a recovered neural drift or a grid solution.
pub enum Side {
    Neural(NeuralSide),
    Grid(GridArtifact),
}

pub struct NeuralSide {
    pub drift: RecoveredDrift,
    pub horizon: f64,
    /// Time nodes of the score stage.
    pub steps: usize,
    pub train: Option<TrainSummary>,
}

impl Side {
    /// A `grid-solve` directory, or a `recover-drift` directory holding
    /// `field.json`, `score.json` and `config.toml`.
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        if dir.join(GRID_STATE_FILE).is_file() {
            return Ok(Side::Grid(GridArtifact::load(dir)?));
        }
        if !(dir.join(FIELD_FILE).is_file() && dir.join(SCORE_FILE).is_file()) {
            return Err(CliError::Io(format!(
                "{}: no {GRID_STATE_FILE} and no {FIELD_FILE}/{SCORE_FILE} pair",
                dir.display()
            )));
        }
        let cfg = ExperimentConfig::load(&dir.join(CONFIG_FILE))?;
        let f = load_net(&dir.join(FIELD_FILE), cfg.dim())?;
        let s = load_net(&dir.join(SCORE_FILE), cfg.dim())?;
        let drift = recover_drift(&f, &s, cfg.score.sigma, cfg.score.mode)?;
        let ts = dir.join(TRAIN_SUMMARY_FILE);
        let train = if ts.is_file() { Some(read_json(&ts)?) } else { None };
        Ok(Side::Neural(NeuralSide {
            drift,
            horizon: cfg.score.horizon,
            steps: cfg.score.steps,
            train,
        }))
    }

    fn dim(&self) -> usize {
        match self {
            Side::Neural(n) => n.drift.dim(),
            Side::Grid(g) => g.spec.dim,
        }
    }

    fn horizon(&self) -> f64 {
        match self {
            Side::Neural(n) => n.horizon,
            Side::Grid(g) => g.spec.horizon,
        }
    }

    fn objective(&self) -> Option<f64> {
        match self {
            Side::Neural(n) => n.train.as_ref().map(|t| t.mean_b),
            Side::Grid(g) => Some(g.objective),
        }
    }

    fn kl(&self) -> Option<KlSummary> {
        match self {
            Side::Neural(n) => n.train.as_ref().and_then(|t| t.kl),
            Side::Grid(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub window: [f64; 2],
    /// `grid_density` when either side is a grid, else `uniform`.
    pub weighting: String,
    /// `sqrt(sum w |a - b|^2 / sum w)` over the nodes in the window.
    pub drift_l2: f64,
    pub score_l2: f64,
    pub drift_nodes: usize,
    pub score_nodes: usize,
    pub neural_objective: Option<f64>,
    pub grid_objective: Option<f64>,
    pub objective_gap: Option<f64>,
    pub neural_kl: Option<KlSummary>,
    pub grid_kl: Option<KlSummary>,
}

#[derive(Default)]
struct Acc {
    num: f64,
    den: f64,
    nodes: usize,
}

impl Acc {
    fn add(&mut self, w: f64, a: &[f64], b: &[f64]) {
        self.num += w * a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        self.den += w;
        self.nodes += 1;
    }

    fn l2(&self) -> Result<f64, CliError> {
        if self.den > 0.0 {
            Ok((self.num / self.den).sqrt())
        } else {
            Err(CliError::Config(
                "compare: no nodes with positive weight inside the window".into(),
            ))
        }
    }
}

fn in_window(x: &[f64], w: [f64; 2]) -> bool {
    x.iter().all(|v| *v >= w[0] && *v <= w[1])
}

/// Drift slices `0..nt` and score slices `0..=nt` of a grid solution.
fn grid_fields(g: &GridArtifact) -> (Vec<MaskedField>, Vec<MaskedField>) {
    let s = &g.spec;
    let drift = reference_drift(s, &g.state);
    let score = (0..=s.nt)
        .map(|t| reference_score(s.dim, s.nx, g.state.rho_slice(t), s.h()))
        .collect();
    (drift, score)
}

/// Density-weighted error of `value(x, t)` against the grid drift over the
/// cells inside `window` and slices `0..nt`.
pub fn drift_error_vs_grid(
    g: &GridArtifact,
    window: [f64; 2],
    value: impl Fn(&[f64], f64) -> Vec<f64>,
) -> Result<f64, CliError> {
    check_window(g, window)?;
    let s = &g.spec;
    let drift = reference_drift(s, &g.state);
    let mut acc = Acc::default();
    for (t, field) in drift.iter().enumerate() {
        let rho = g.state.rho_slice(t);
        for j in 0..s.cells() {
            let x = s.cell_center(j);
            if let (true, Some(u)) = (in_window(&x, window), field.at(j)) {
                acc.add(rho[j], &value(&x, t as f64 * s.dt()), u);
            }
        }
    }
    acc.l2()
}

/// Error of a bare field network against the grid drift, e.g. a small-noise
/// field against the transport velocity.
pub fn field_error_vs_grid(
    f: &ParamVector,
    g: &GridArtifact,
    window: [f64; 2],
) -> Result<f64, CliError> {
    if f.dim() != g.spec.dim {
        return Err(CliError::Config("compare: dimensions differ".into()));
    }
    drift_error_vs_grid(g, window, |x, t| eval_field(f, x, t).unwrap_or_default())
}

fn check_window(g: &GridArtifact, w: [f64; 2]) -> Result<(), CliError> {
    if !(w[0] < w[1]) || w[0] < g.spec.lo || w[1] > g.spec.hi {
        return Err(CliError::Config(format!(
            "compare: window [{}, {}] is not inside the grid domain [{}, {}]",
            w[0], w[1], g.spec.lo, g.spec.hi
        )));
    }
    Ok(())
}

pub fn compare(
    neural: &Side,
    grid: &Side,
    window: [f64; 2],
    points: usize,
) -> Result<ComparisonReport, CliError> {
    if neural.dim() != grid.dim() {
        return Err(CliError::Config(format!(
            "compare: mismatched domains, dimension {} vs {}",
            neural.dim(),
            grid.dim()
        )));
    }
    if neural.horizon() != grid.horizon() {
        return Err(CliError::Config(format!(
            "compare: mismatched domains, horizon {} vs {}",
            neural.horizon(),
            grid.horizon()
        )));
    }
    let mut drift = Acc::default();
    let mut score = Acc::default();
    let weighting = match (neural, grid) {
        (Side::Grid(a), Side::Grid(b)) => {
            let (sa, sb) = (&a.spec, &b.spec);
            if (sa.nx, sa.nt, sa.lo, sa.hi) != (sb.nx, sb.nt, sb.lo, sb.hi) {
                return Err(CliError::Config(format!(
                    "compare: mismatched domains, grids {}x{} on [{}, {}] vs {}x{} on [{}, {}]",
                    sa.nx, sa.nt, sa.lo, sa.hi, sb.nx, sb.nt, sb.lo, sb.hi
                )));
            }
            check_window(b, window)?;
            let (da, ca) = grid_fields(a);
            let (db, cb) = grid_fields(b);
            for t in 0..=sb.nt {
                let rho = b.state.rho_slice(t);
                for j in 0..sb.cells() {
                    if !in_window(&sb.cell_center(j), window) {
                        continue;
                    }
                    if t < sb.nt {
                        if let (Some(x), Some(y)) = (da[t].at(j), db[t].at(j)) {
                            drift.add(rho[j], x, y);
                        }
                    }
                    if let (Some(x), Some(y)) = (ca[t].at(j), cb[t].at(j)) {
                        score.add(rho[j], x, y);
                    }
                }
            }
            "grid_density"
        }
        (Side::Neural(n), Side::Grid(g)) | (Side::Grid(g), Side::Neural(n)) => {
            check_window(g, window)?;
            let s = &g.spec;
            let (dg, cg) = grid_fields(g);
            for t in 0..=s.nt {
                let rho = g.state.rho_slice(t);
                let time = t as f64 * s.dt();
                for j in 0..s.cells() {
                    let x = s.cell_center(j);
                    if !in_window(&x, window) {
                        continue;
                    }
                    let e = n.drift.eval(&x, time);
                    if t < s.nt {
                        if let Some(u) = dg[t].at(j) {
                            drift.add(rho[j], &e.u, u);
                        }
                    }
                    if let Some(sc) = cg[t].at(j) {
                        score.add(rho[j], &e.s, sc);
                    }
                }
            }
            "grid_density"
        }
        (Side::Neural(a), Side::Neural(b)) => {
            let xs = lattice(a.drift.dim(), window[0], window[1], points);
            for k in 0..=a.steps {
                let time = a.horizon * k as f64 / a.steps as f64;
                for x in xs.chunks(a.drift.dim()) {
                    let (ea, eb) = (a.drift.eval(x, time), b.drift.eval(x, time));
                    drift.add(1.0, &ea.u, &eb.u);
                    score.add(1.0, &ea.s, &eb.s);
                }
            }
            "uniform"
        }
    };
    let (no, go) = (neural.objective(), grid.objective());
    Ok(ComparisonReport {
        window,
        weighting: weighting.to_string(),
        drift_l2: drift.l2()?,
        score_l2: score.l2()?,
        drift_nodes: drift.nodes,
        score_nodes: score.nodes,
        neural_objective: no,
        grid_objective: go,
        objective_gap: no.zip(go).map(|(a, b)| a - b),
        neural_kl: neural.kl(),
        grid_kl: grid.kl(),
    })
}

/// `report.json`, `config.toml`, `manifest.json`.
pub fn cmd_compare(
    cfg: &ExperimentConfig,
    neural_dir: &Path,
    grid_dir: &Path,
    window: [f64; 2],
    out: &Path,
) -> Result<ComparisonReport, CliError> {
    create_dir(out)?;
    let mut manifest = Manifest::new("compare", cfg)?;
    for dir in [neural_dir, grid_dir] {
        for f in [GRID_STATE_FILE, FIELD_FILE, SCORE_FILE] {
            let p = dir.join(f);
            if p.is_file() {
                manifest.add_input(&p)?;
            }
        }
    }
    let a = Side::load(neural_dir)?;
    let b = Side::load(grid_dir)?;
    let report = compare(&a, &b, window, cfg.compare.points)?;
    write_json(&out.join("report.json"), &report)?;
    manifest.finish(out)?;
    Ok(report)
}

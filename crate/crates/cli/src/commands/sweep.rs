use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sbp_core::nn::{eval_field, Checkpoint, ParamVector};
use sbp_core::train::DataSampler;
use sbp_core::util::{fmt_real, run_indexed};
use serde::{Deserialize, Serialize};

use super::train::{evaluate_with, fit_with};
use super::{create_dir, mean, std_dev, FIELD_FILE};
use crate::config::{derive_seed, ExperimentConfig, SeedTag, SweepParam, SweepSpec};
use crate::error::CliError;
use crate::manifest::Manifest;

/// One (value, replicate) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub replicate: usize,
    pub seed: u64,
    /// Mean bridge cost on the evaluation batch.
    pub j_b: f64,
    pub kl: Option<f64>,
    pub objective: f64,
    /// `sqrt(E_{rho_0} |f(x, 0)|^2)`.
    pub f0_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepStat {
    pub value: f64,
    pub n: usize,
    pub j_b_mean: f64,
    pub j_b_std: f64,
    pub kl_mean: Option<f64>,
    pub kl_std: Option<f64>,
    pub objective_mean: f64,
    pub objective_std: f64,
    pub f0_norm_mean: f64,
    pub f0_norm_std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub parameter: SweepParam,
    pub rows: Vec<SweepRow>,
    pub stats: Vec<SweepStat>,
}

/// Config of one cell: its own master seed (shared across values, so every
/// value sees the same replicate seeds) and the swept parameter set.
pub fn cell_config(cfg: &ExperimentConfig, sweep: &SweepSpec, value: f64, replicate: usize) -> ExperimentConfig {
    let mut c = cfg
        .clone()
        .with_seed(derive_seed(cfg.seed, 1000 + replicate as u64))
        .with_workers(1);
    match sweep.parameter {
        SweepParam::Alpha => c.train.alpha = value,
        SweepParam::Sigma => {
            c.train.sigma = value;
            c.score.sigma = value;
        }
    }
    c
}

fn f0_norm(cfg: &ExperimentConfig, p: &ParamVector) -> Result<f64, CliError> {
    let d = cfg.dim();
    let x = DataSampler::new(cfg.sampler_kind(), cfg.sub_seed(SeedTag::Eval)).sample(cfg.eval_samples);
    let mut acc = 0.0;
    for z in x.chunks(d) {
        acc += eval_field(p, z, 0.0)?.iter().map(|v| v * v).sum::<f64>();
    }
    Ok((acc / (x.len() / d) as f64).sqrt())
}

fn run_cell(cell: &ExperimentConfig, value: f64, replicate: usize) -> Result<(SweepRow, ParamVector), CliError> {
    let o = fit_with(cell, &cell.train, None)?;
    let s = evaluate_with(cell, &cell.train, &o.params)?;
    let row = SweepRow {
        value,
        replicate,
        seed: cell.seed,
        j_b: s.mean_b,
        kl: s.kl.map(|k| k.mean),
        objective: s.objective,
        f0_norm: f0_norm(cell, &o.params)?,
    };
    Ok((row, o.params))
}

/// Trains and evaluates every (value, replicate) cell on a pool of
/// `cfg.workers` threads. Cell checkpoints go to
/// `out/cells/v<i>_r<k>/field.json` when `out` is given.
pub fn run_sweep(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<SweepResult, CliError> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("sweep: missing [sweep] section".into()))?;
    if sweep.values.is_empty() {
        return Err(CliError::Config("sweep.values: empty sweep list".into()));
    }
    let cells: Vec<(usize, usize)> = (0..sweep.values.len())
        .flat_map(|i| (0..sweep.seeds).map(move |r| (i, r)))
        .collect();
    let configs: Vec<ExperimentConfig> = cells
        .iter()
        .map(|&(i, r)| cell_config(cfg, sweep, sweep.values[i], r))
        .collect();
    for c in &configs {
        c.train.validate()?;
    }
    let results = run_indexed(cells.len(), cfg.workers, || (), |k, _| {
        let (i, r) = cells[k];
        run_cell(&configs[k], sweep.values[i], r)
    });
    let mut rows = Vec::with_capacity(cells.len());
    for (k, res) in results.into_iter().enumerate() {
        let (row, params) = res?;
        if let Some(dir) = out {
            let (i, r) = cells[k];
            let cell_dir = dir.join("cells").join(format!("v{i}_r{r}"));
            create_dir(&cell_dir)?;
            let c = &configs[k];
            Checkpoint::new(Some(c.train.net.clone()), &params, c.train.seed, c.train.iterations as u64)
                .save(&cell_dir.join(FIELD_FILE))?;
        }
        rows.push(row);
    }
    let stats = sweep
        .values
        .iter()
        .map(|&v| {
            let sel: Vec<&SweepRow> = rows.iter().filter(|r| r.value == v).collect();
            let col = |f: &dyn Fn(&SweepRow) -> f64| -> Vec<f64> { sel.iter().map(|r| f(r)).collect() };
            let jb = col(&|r| r.j_b);
            let obj = col(&|r| r.objective);
            let f0 = col(&|r| r.f0_norm);
            let kl: Option<Vec<f64>> = sel.iter().map(|r| r.kl).collect();
            SweepStat {
                value: v,
                n: sel.len(),
                j_b_mean: mean(&jb),
                j_b_std: std_dev(&jb),
                kl_mean: kl.as_ref().map(|k| mean(k)),
                kl_std: kl.as_ref().map(|k| std_dev(k)),
                objective_mean: mean(&obj),
                objective_std: std_dev(&obj),
                f0_norm_mean: mean(&f0),
                f0_norm_std: std_dev(&f0),
            }
        })
        .collect();
    Ok(SweepResult {
        parameter: sweep.parameter,
        rows,
        stats,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_real).unwrap_or_default()
}

fn param_name(p: SweepParam) -> &'static str {
    match p {
        SweepParam::Alpha => "alpha",
        SweepParam::Sigma => "sigma",
    }
}

pub fn write_sweep_csv(path: &Path, r: &SweepResult) -> Result<(), CliError> {
    let mut s = String::from("parameter,value,replicate,seed,J_B,KL,J,f0_norm\n");
    for row in &r.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            param_name(r.parameter),
            fmt_real(row.value),
            row.replicate,
            row.seed,
            fmt_real(row.j_b),
            opt(row.kl),
            fmt_real(row.objective),
            fmt_real(row.f0_norm)
        );
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn write_sweep_summary_csv(path: &Path, r: &SweepResult) -> Result<(), CliError> {
    let mut s = String::from(
        "parameter,value,n,J_B_mean,J_B_std,KL_mean,KL_std,J_mean,J_std,f0_norm_mean,f0_norm_std\n",
    );
    for st in &r.stats {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            param_name(r.parameter),
            fmt_real(st.value),
            st.n,
            fmt_real(st.j_b_mean),
            fmt_real(st.j_b_std),
            opt(st.kl_mean),
            opt(st.kl_std),
            fmt_real(st.objective_mean),
            fmt_real(st.objective_std),
            fmt_real(st.f0_norm_mean),
            fmt_real(st.f0_norm_std)
        );
    }
    fs::write(path, s)?;
    Ok(())
}

/// `sweep.csv`, `sweep_summary.csv`, `cells/*/field.json`, `config.toml`,
/// `manifest.json`.
pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<SweepResult, CliError> {
    create_dir(out)?;
    let manifest = Manifest::new("sweep", cfg)?;
    let r = run_sweep(cfg, Some(out))?;
    write_sweep_csv(&out.join("sweep.csv"), &r)?;
    write_sweep_summary_csv(&out.join("sweep_summary.csv"), &r)?;
    manifest.finish(out)?;
    Ok(r)
}

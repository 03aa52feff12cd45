use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sbp_core::flow::{
    generative_path, integrate_forward, sample_sde_paths, write_trajectory_csv, FlowField,
    TimeGrid, TrajectoryBatch,
};
use sbp_core::nn::{eval_field, DivergenceMode, ParamVector};
use sbp_core::score::{recover_drift, RecoveredDrift};
use sbp_core::train::{DataSampler, Potential, SamplerKind};
use sbp_core::util::{energy_distance, fmt_real};
use serde::{Deserialize, Serialize};

use super::{create_dir, load_net, mean, write_json, SUMMARY_FILE};
use crate::config::{ExperimentConfig, SeedTag};
use crate::error::CliError;
use crate::manifest::Manifest;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoubleWellStats {
    pub barrier_offset: f64,
    /// `U(0, 0)`, the straight-line midpoint between the wells.
    pub midpoint_potential: f64,
    /// Fraction of forward ODE paths whose largest node potential stays
    /// strictly below `midpoint_potential`.
    pub below_midpoint_fraction: f64,
    /// Maximum of `U` on the segment between the wells.
    pub peak: [f64; 2],
    pub disk_radius: f64,
    /// Fraction of SDE paths with a node inside the disk around `peak`.
    pub disk_fraction: Option<f64>,
    /// Fraction of forward ODE paths with `y > 0` at the middle node.
    pub upper_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub n: usize,
    /// Forward terminal samples against fresh target samples.
    pub energy_distance: f64,
    pub terminal_mean: Vec<f64>,
    pub terminal_var: Vec<f64>,
    /// Terminal samples outside the histogram range.
    pub outside_histogram: usize,
    pub sde_paths: usize,
    pub double_well: Option<DoubleWellStats>,
}

/// Target `rho_1` as a sampler kind.
fn target_kind(cfg: &ExperimentConfig) -> SamplerKind {
    match &cfg.train.terminal {
        Some(t) => SamplerKind::Gaussian {
            mean: t.mean.clone(),
            var: t.var.clone(),
        },
        None => SamplerKind::Gaussian {
            mean: vec![0.0; cfg.dim()],
            var: vec![1.0; cfg.dim()],
        },
    }
}

fn truncate(b: &TrajectoryBatch, keep: usize) -> TrajectoryBatch {
    let keep = keep.min(b.batch);
    let rows = keep * (b.grid.steps + 1);
    TrajectoryBatch {
        dim: b.dim,
        grid: b.grid,
        batch: keep,
        z: b.z[..rows * b.dim].to_vec(),
        ell: b.ell[..rows].to_vec(),
        s: None,
    }
}

/// `sample_id, k, t, z_1..z_d` for `paths` laid out `batch x (steps+1) x d`.
fn write_paths_csv(path: &Path, paths: &[f64], dim: usize, grid: TimeGrid) -> Result<(), CliError> {
    let mut s = String::from("sample_id,k,t");
    for i in 1..=dim {
        let _ = write!(s, ",z_{i}");
    }
    s.push('\n');
    let per = (grid.steps + 1) * dim;
    for (b, p) in paths.chunks(per).enumerate() {
        for (k, z) in p.chunks(dim).enumerate() {
            let _ = write!(s, "{b},{k},{}", fmt_real(grid.node(k)));
            for v in z {
                let _ = write!(s, ",{}", fmt_real(*v));
            }
            s.push('\n');
        }
    }
    fs::write(path, s)?;
    Ok(())
}

/// Per-axis histogram on `mean +- 5 sd` of the target marginal. Returns the
/// number of samples outside the range.
fn write_histogram(
    path: &Path,
    samples: &[f64],
    dim: usize,
    target: &SamplerKind,
    bins: usize,
) -> Result<usize, CliError> {
    let SamplerKind::Gaussian { mean: tm, var: tv } = target else {
        unreachable!("targets are Gaussian")
    };
    let n = samples.len() / dim;
    let mut out = String::from("axis,bin_lo,bin_hi,count,density,target_density\n");
    let mut outside = 0;
    for a in 0..dim {
        let sd = tv[a].sqrt();
        let (lo, hi) = (tm[a] - 5.0 * sd, tm[a] + 5.0 * sd);
        let w = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for z in samples.chunks(dim) {
            let b = ((z[a] - lo) / w).floor();
            if b >= 0.0 && (b as usize) < bins {
                counts[b as usize] += 1;
            } else {
                outside += 1;
            }
        }
        for (b, c) in counts.iter().enumerate() {
            let (l, h) = (lo + b as f64 * w, lo + (b + 1) as f64 * w);
            let x = 0.5 * (l + h);
            let pdf = (-(x - tm[a]).powi(2) / (2.0 * tv[a])).exp()
                / (2.0 * std::f64::consts::PI * tv[a]).sqrt();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                a + 1,
                fmt_real(l),
                fmt_real(h),
                c,
                fmt_real(*c as f64 / (n as f64 * w)),
                fmt_real(pdf)
            );
        }
    }
    fs::write(path, out)?;
    Ok(outside)
}

/// Largest potential on the segment from `(-1, 0)` to `(1, 0)`.
pub fn barrier_peak(u: &Potential) -> [f64; 2] {
    let n = 20_000;
    (0..=n)
        .map(|i| [-1.0 + 2.0 * i as f64 / n as f64, 0.0])
        .max_by(|a, b| u.value(a).total_cmp(&u.value(b)))
        .unwrap_or([0.0, 0.0])
}

fn sde_drift<'a>(
    f: &'a ParamVector,
    rd: Option<&'a RecoveredDrift>,
    prior: Option<&'a Potential>,
) -> impl Fn(&[f64], f64, &mut [f64]) + 'a {
    move |x, t, out| {
        let u = match rd {
            Some(r) => r.drift(x, t),
            None => eval_field(f, x, t).unwrap_or_else(|_| vec![f64::NAN; x.len()]),
        };
        out.copy_from_slice(&u);
        if let Some(p) = prior {
            let g = p.gradient(x);
            out.iter_mut().zip(g).for_each(|(o, gi)| *o -= gi);
        }
    }
}

/// ODE forward and generative paths, SDE paths, terminal histogram and
/// summary statistics. SDE paths need the score network when `sigma > 0`.
pub fn cmd_sample(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    score: Option<&Path>,
    out: &Path,
) -> Result<SampleSummary, CliError> {
    let sigma = cfg.train.sigma;
    if sigma > 0.0 && cfg.sample.sde_paths > 0 && score.is_none() {
        return Err(CliError::Config(
            "sample: SDE paths with sigma > 0 need --score".into(),
        ));
    }
    create_dir(out)?;
    let mut manifest = Manifest::new("sample", cfg)?;
    manifest.add_input(checkpoint)?;
    let d = cfg.dim();
    let f = load_net(checkpoint, d)?;
    let rd = match score {
        Some(p) => {
            manifest.add_input(p)?;
            let s = load_net(p, d)?;
            Some(recover_drift(&f, &s, cfg.score.sigma, cfg.score.mode)?)
        }
        None => None,
    };
    let prior = cfg.prior();
    let grid = TimeGrid::new(cfg.train.horizon, cfg.train.steps)?;
    let s = &cfg.sample;

    let x0 = DataSampler::new(cfg.sampler_kind(), cfg.sub_seed(SeedTag::Sample)).sample(s.n);
    let fwd = integrate_forward(&f, prior.as_ref(), &x0, grid, DivergenceMode::Exact)?;
    write_trajectory_csv(&out.join("ode_forward.csv"), &truncate(&fwd, s.trajectories))?;

    let target = target_kind(cfg);
    let z1 = DataSampler::new(target.clone(), cfg.sub_seed(SeedTag::Target)).sample(s.trajectories);
    let field = FlowField::new(&f, prior.as_ref(), grid)?;
    let mut ws = field.workspace();
    let mut nodes = Vec::new();
    let mut gen = Vec::with_capacity(z1.len() * (grid.steps + 1));
    for (b, z) in z1.chunks(d).enumerate() {
        generative_path(&field, z, &mut ws, &mut nodes)
            .map_err(|step| CliError::Numerical(format!("generative path {b} non-finite at step {step}")))?;
        gen.extend_from_slice(&nodes);
    }
    write_paths_csv(&out.join("ode_generative.csv"), &gen, d, grid)?;

    let sde_grid = TimeGrid::new(cfg.train.horizon, s.sde_steps)?;
    let xs = DataSampler::new(cfg.sampler_kind(), cfg.sub_seed(SeedTag::Sde)).sample(s.sde_paths);
    let drift = sde_drift(&f, rd.as_ref(), prior.as_ref());
    let sde = sample_sde_paths(&drift, sigma, &xs, d, sde_grid, cfg.sub_seed(SeedTag::Sde))?;
    write_paths_csv(&out.join("sde_paths.csv"), &sde, d, sde_grid)?;

    let terminal = fwd.terminal();
    let outside = write_histogram(&out.join("terminal_hist.csv"), &terminal, d, &target, s.bins)?;
    let y = DataSampler::new(target, cfg.sub_seed(SeedTag::Target) ^ 1).sample(s.n);
    let ed = energy_distance(&terminal, &y, d);
    let terminal_mean: Vec<f64> = (0..d)
        .map(|a| mean(&terminal.iter().skip(a).step_by(d).copied().collect::<Vec<_>>()))
        .collect();
    let terminal_var = (0..d)
        .map(|a| {
            let m = terminal_mean[a];
            terminal.iter().skip(a).step_by(d).map(|v| (v - m).powi(2)).sum::<f64>()
                / (s.n - 1) as f64
        })
        .collect();

    let double_well = prior.as_ref().map(|u| {
        let mid = u.value(&[0.0, 0.0]);
        let below = (0..fwd.batch)
            .filter(|&b| {
                (0..=grid.steps)
                    .map(|k| u.value(fwd.z_at(b, k)))
                    .fold(f64::NEG_INFINITY, f64::max)
                    < mid
            })
            .count();
        let upper = (0..fwd.batch)
            .filter(|&b| fwd.z_at(b, grid.steps / 2)[1] > 0.0)
            .count();
        let peak = barrier_peak(u);
        let per = (sde_grid.steps + 1) * d;
        let hits = sde
            .chunks(per)
            .filter(|p| {
                p.chunks(d).any(|z| {
                    ((z[0] - peak[0]).powi(2) + (z[1] - peak[1]).powi(2)).sqrt() < s.disk_radius
                })
            })
            .count();
        DoubleWellStats {
            barrier_offset: cfg.barrier_offset,
            midpoint_potential: mid,
            below_midpoint_fraction: below as f64 / fwd.batch as f64,
            peak,
            disk_radius: s.disk_radius,
            disk_fraction: (s.sde_paths > 0).then(|| hits as f64 / s.sde_paths as f64),
            upper_fraction: upper as f64 / fwd.batch as f64,
        }
    });

    let summary = SampleSummary {
        n: s.n,
        energy_distance: ed,
        terminal_mean,
        terminal_var,
        outside_histogram: outside,
        sde_paths: s.sde_paths,
        double_well,
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    manifest.finish(out)?;
    Ok(summary)
}

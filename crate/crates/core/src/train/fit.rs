use std::fmt::Write as _;
use std::path::Path;

use super::data::DataSampler;
use super::loss::{sample_loss, LossWeights, SampleOut, SampleWorkspace, StepFailure};
use super::{Potential, TrainConfig, TrainError};
use crate::density::LogDensity;
use crate::flow::{forward_sample, sample_probes, FlowField, TimeGrid};
use crate::nn::{AdamConfig, AdamState, DivergenceMode, NnError, ParamVector, TimeCotangent};
use crate::util::{fmt_real, run_indexed};

/// Per-sample terms of the objective and their weighted mean.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTerms {
    pub c: Vec<f64>,
    pub b: Vec<f64>,
    pub j: f64,
}

impl LossTerms {
    pub fn mean_c(&self) -> f64 {
        mean(&self.c)
    }

    pub fn mean_b(&self) -> f64 {
        mean(&self.b)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub iter: usize,
    pub j: f64,
    pub mean_c: f64,
    pub mean_b: f64,
    /// Batch estimate of `KL(rho_T || rho_1)`, when `rho_0` has a density.
    pub kl: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: ParamVector,
    pub history: Vec<HistoryRow>,
    pub adam: AdamState,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KlEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

pub(crate) fn probe_seed(base: u64, iteration: usize) -> u64 {
    base ^ (iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn check_batch(params: &ParamVector, batch: &[f64]) -> Result<usize, TrainError> {
    let d = params.dim();
    if batch.is_empty() || batch.len() % d != 0 {
        return Err(TrainError::InvalidConfig(format!(
            "batch length {} is not a positive multiple of dim {d}",
            batch.len()
        )));
    }
    Ok(batch.len() / d)
}

fn batch_pass(
    params: &ParamVector,
    batch: &[f64],
    cfg: &TrainConfig,
    prior: Option<&Potential>,
    iteration: usize,
    want_grad: bool,
) -> Result<(LossTerms, Vec<f64>), TrainError> {
    cfg.validate()?;
    let n = check_batch(params, batch)?;
    let d = params.dim();
    let grid = TimeGrid::new(cfg.horizon, cfg.steps)?;
    let field = FlowField::new(params, prior, grid)?;
    let terminal = cfg.terminal_density();
    let weights = LossWeights {
        alpha: cfg.alpha,
        sigma2: cfg.sigma * cfg.sigma,
    };
    let probe_cfg = match cfg.divergence {
        DivergenceMode::Exact => None,
        DivergenceMode::Hutchinson(mut p) => {
            p.seed = probe_seed(p.seed, iteration);
            Some(p)
        }
    };
    let results: Vec<Result<SampleOut, StepFailure>> = run_indexed(
        n,
        cfg.workers,
        || SampleWorkspace::new(d),
        |i, ws| {
            let probes = probe_cfg.map(|p| sample_probes(&p, d, i));
            sample_loss(
                &field,
                &batch[i * d..(i + 1) * d],
                probes.as_deref(),
                weights,
                &terminal,
                want_grad,
                ws,
            )
        },
    );
    let mut terms = LossTerms {
        c: Vec::with_capacity(n),
        b: Vec::with_capacity(n),
        j: 0.0,
    };
    let mut grad = if want_grad {
        vec![0.0; params.len()]
    } else {
        Vec::new()
    };
    let mut tcot: Vec<TimeCotangent> = if want_grad {
        (0..=2 * cfg.steps)
            .map(|i| TimeCotangent::zeros_like(field.features(i)))
            .collect()
    } else {
        Vec::new()
    };
    for (i, r) in results.into_iter().enumerate() {
        let out = r.map_err(|StepFailure(step)| TrainError::NonFinite { sample: i, step })?;
        terms.c.push(out.c);
        terms.b.push(out.b);
        if want_grad {
            grad.iter_mut().zip(&out.grad).for_each(|(g, v)| *g += v);
            for (a, b) in tcot.iter_mut().zip(&out.tcot) {
                a.add_assign(b);
            }
        }
    }
    terms.j = terms
        .c
        .iter()
        .zip(&terms.b)
        .map(|(c, b)| cfg.alpha * c + b)
        .sum::<f64>()
        / n as f64;
    if want_grad {
        for (i, tc) in tcot.iter().enumerate() {
            params.time_features_backward(field.features(i), tc, &mut grad);
        }
        grad.iter_mut().for_each(|g| *g /= n as f64);
    }
    Ok((terms, grad))
}

/// `C`, `B` per sample and `J = mean(alpha C + B)` for the rows of `batch`.
pub fn loss_terms(
    params: &ParamVector,
    batch: &[f64],
    cfg: &TrainConfig,
    prior: Option<&Potential>,
) -> Result<LossTerms, TrainError> {
    batch_pass(params, batch, cfg, prior, 0, false).map(|(t, _)| t)
}

/// As [`loss_terms`], plus `dJ/dtheta`.
pub fn loss_and_grad(
    params: &ParamVector,
    batch: &[f64],
    cfg: &TrainConfig,
    prior: Option<&Potential>,
) -> Result<(LossTerms, Vec<f64>), TrainError> {
    batch_pass(params, batch, cfg, prior, 0, true)
}

fn batch_kl(
    terms: &LossTerms,
    rho0: Option<&dyn LogDensity>,
    batch: &[f64],
    d: usize,
) -> Option<f64> {
    let rho0 = rho0?;
    let s: f64 = batch
        .chunks(d)
        .zip(&terms.c)
        .map(|(x, c)| rho0.log_density(x) + c)
        .sum();
    Some(s / terms.c.len() as f64)
}

/// Adam on fresh batches from `sampler`, starting from the seeded
/// initialization.
pub fn train(
    cfg: &TrainConfig,
    sampler: &mut DataSampler,
    prior: Option<&Potential>,
) -> Result<TrainOutput, TrainError> {
    let init = ParamVector::init(&cfg.net, cfg.seed)?;
    train_from(cfg, sampler, prior, init, &mut |_| {})
}

/// Adam from `init`; `observer` sees every history row as it is produced.
pub fn train_from(
    cfg: &TrainConfig,
    sampler: &mut DataSampler,
    prior: Option<&Potential>,
    init: ParamVector,
    observer: &mut dyn FnMut(&HistoryRow),
) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    let d = init.dim();
    if sampler.dim() != d {
        return Err(TrainError::InvalidConfig(format!(
            "sampler dimension {} does not match net dimension {d}",
            sampler.dim()
        )));
    }
    let rho0 = sampler.kind.density();
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut params = init;
    let mut adam = AdamState::new(params.len());
    let mut history = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let batch = sampler.sample(cfg.batch_size);
        let diverged = |reason: String, p: &ParamVector| TrainError::Diverged {
            iteration: it,
            reason,
            last_good: Box::new(p.clone()),
        };
        let (terms, grad) = match batch_pass(&params, &batch, cfg, prior, it, true) {
            Ok(v) => v,
            Err(TrainError::NonFinite { sample, step }) => {
                return Err(diverged(
                    format!("non-finite trajectory for sample {sample} at step {step}"),
                    &params,
                ))
            }
            Err(e) => return Err(e),
        };
        if !terms.j.is_finite() {
            return Err(diverged("non-finite loss".into(), &params));
        }
        let row = HistoryRow {
            iter: it,
            j: terms.j,
            mean_c: terms.mean_c(),
            mean_b: terms.mean_b(),
            kl: batch_kl(&terms, rho0.as_deref(), &batch, d),
        };
        observer(&row);
        history.push(row);
        let before = params.clone();
        match adam.step(&mut params, &grad, &adam_cfg) {
            Ok(()) => {}
            Err(NnError::NonFinite(m)) => return Err(diverged(m, &before)),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(TrainOutput {
        params,
        history,
        adam,
    })
}

/// Monte-Carlo `E[log rho_0(x) + C(x)]` over `n` fresh draws, with its
/// standard error.
pub fn kl_estimate(
    params: &ParamVector,
    sampler: &mut DataSampler,
    cfg: &TrainConfig,
    prior: Option<&Potential>,
    n: usize,
) -> Result<KlEstimate, TrainError> {
    cfg.validate()?;
    let rho0 = sampler.kind.density().ok_or_else(|| {
        TrainError::InvalidConfig("kl_estimate needs a sampler with a known density".into())
    })?;
    if n < 2 {
        return Err(TrainError::InvalidConfig("kl_estimate needs n >= 2".into()));
    }
    let d = params.dim();
    if sampler.dim() != d {
        return Err(TrainError::InvalidConfig(
            "sampler and net dimensions differ".into(),
        ));
    }
    let x = sampler.sample(n);
    let grid = TimeGrid::new(cfg.horizon, cfg.steps)?;
    let field = FlowField::new(params, prior, grid)?;
    let terminal = cfg.terminal_density();
    let probe_cfg = match cfg.divergence {
        DivergenceMode::Exact => None,
        DivergenceMode::Hutchinson(p) => Some(p),
    };
    let vals: Vec<Result<f64, TrainError>> = run_indexed(
        n,
        cfg.workers,
        || SampleWorkspace::new(d),
        |i, ws| {
            let xi = &x[i * d..(i + 1) * d];
            let probes = probe_cfg.map(|p| sample_probes(&p, d, i));
            forward_sample(
                &field,
                xi,
                probes.as_deref(),
                false,
                &mut ws.field,
                &mut ws.rec,
            )
            .map_err(|step| TrainError::NonFinite { sample: i, step })?;
            let zn = ws.rec.z_at(grid.steps);
            let c = -ws.rec.ell[grid.steps] - terminal.log_density(zn);
            Ok(rho0.log_density(xi) + c)
        },
    );
    let vals = vals.into_iter().collect::<Result<Vec<f64>, _>>()?;
    let m = mean(&vals);
    let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(KlEstimate {
        mean: m,
        stderr: (var / n as f64).sqrt(),
        n,
    })
}

/// Per sample `int_0^T |f|^2 dt` along the forward trajectory, trapezoid
/// rule on the nodes. `f` is the network output, without the prior.
pub fn field_energy(
    params: &ParamVector,
    batch: &[f64],
    cfg: &TrainConfig,
    prior: Option<&Potential>,
) -> Result<Vec<f64>, TrainError> {
    cfg.validate()?;
    let n = check_batch(params, batch)?;
    let d = params.dim();
    let grid = TimeGrid::new(cfg.horizon, cfg.steps)?;
    let field = FlowField::new(params, prior, grid)?;
    let h = grid.dt();
    let vals: Vec<Result<f64, TrainError>> = run_indexed(
        n,
        cfg.workers,
        || SampleWorkspace::new(d),
        |i, ws| {
            let xi = &batch[i * d..(i + 1) * d];
            forward_sample(&field, xi, None, true, &mut ws.field, &mut ws.rec)
                .map_err(|step| TrainError::NonFinite { sample: i, step })?;
            let mut e = 0.0;
            for (k, node) in ws.rec.nodes.iter().enumerate() {
                let w = if k == 0 || k == grid.steps { 0.5 } else { 1.0 };
                e += w * node.f.iter().map(|v| v * v).sum::<f64>();
            }
            Ok(h * e)
        },
    );
    vals.into_iter().collect()
}

/// `iter, J, mean_C, mean_B, kl_estimate`; the last column is empty when
/// unavailable.
pub fn write_history_csv(path: &Path, history: &[HistoryRow]) -> Result<(), TrainError> {
    let mut out = String::from("iter,J,mean_C,mean_B,kl_estimate\n");
    for r in history {
        let _ = write!(
            out,
            "{},{},{},{},",
            r.iter,
            fmt_real(r.j),
            fmt_real(r.mean_c),
            fmt_real(r.mean_b)
        );
        if let Some(k) = r.kl {
            out.push_str(&fmt_real(k));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

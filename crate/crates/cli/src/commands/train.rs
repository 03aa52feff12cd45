use std::path::Path;

use sbp_core::nn::{Checkpoint, ParamVector};
use sbp_core::train::{
    field_energy, kl_estimate, loss_terms, train_from, write_history_csv, DataSampler,
    TrainConfig, TrainError, TrainOutput,
};
use serde::{Deserialize, Serialize};

use super::{create_dir, mean, write_json, FIELD_FILE, SUMMARY_FILE};
use crate::config::{ExperimentConfig, SeedTag};
use crate::error::CliError;
use crate::manifest::Manifest;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlSummary {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Objective terms of a trained field on a fresh evaluation batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub experiment: String,
    pub alpha: f64,
    pub sigma: f64,
    pub iterations: usize,
    pub eval_samples: usize,
    /// `alpha mean C + mean B`.
    pub objective: f64,
    pub mean_c: f64,
    /// Kinetic energy of the drift `u = f + sigma^2 s`; comparable with the
    /// grid objective.
    pub mean_b: f64,
    /// `0.5 E int |f|^2 dt`.
    pub field_energy: f64,
    /// `mean_b - field_energy`.
    pub diffusion_correction: f64,
    pub kl: Option<KlSummary>,
    /// `J` of the last training batch.
    pub final_batch_objective: Option<f64>,
}

/// Trains from the seeded initialization. On divergence the last good
/// parameters are saved next to the other artifacts before the error is
/// returned.
pub fn fit(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<TrainOutput, CliError> {
    fit_with(cfg, &cfg.train, out)
}

pub(crate) fn fit_with(
    cfg: &ExperimentConfig,
    train: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainOutput, CliError> {
    let mut sampler = DataSampler::new(cfg.sampler_kind(), cfg.sub_seed(SeedTag::Data));
    let prior = cfg.prior();
    let init = ParamVector::init(&train.net, train.seed)?;
    match train_from(train, &mut sampler, prior.as_ref(), init, &mut |_| {}) {
        Ok(o) => Ok(o),
        Err(TrainError::Diverged {
            iteration,
            reason,
            last_good,
        }) => {
            if let Some(dir) = out {
                Checkpoint::new(Some(train.net.clone()), &last_good, train.seed, iteration as u64)
                    .save(&dir.join("field_last_good.json"))?;
            }
            Err(CliError::Numerical(format!(
                "training diverged at iteration {iteration}: {reason}"
            )))
        }
        Err(e) => Err(e.into()),
    }
}

pub fn evaluate(cfg: &ExperimentConfig, params: &ParamVector) -> Result<TrainSummary, CliError> {
    evaluate_with(cfg, &cfg.train, params)
}

pub(crate) fn evaluate_with(
    cfg: &ExperimentConfig,
    train: &TrainConfig,
    params: &ParamVector,
) -> Result<TrainSummary, CliError> {
    let prior = cfg.prior();
    let n = cfg.eval_samples;
    let batch = DataSampler::new(cfg.sampler_kind(), cfg.sub_seed(SeedTag::Eval)).sample(n);
    let terms = loss_terms(params, &batch, train, prior.as_ref())?;
    let energy = 0.5 * mean(&field_energy(params, &batch, train, prior.as_ref())?);
    let kl = if cfg.sampler_kind().density().is_some() {
        let mut s = DataSampler::new(cfg.sampler_kind(), cfg.sub_seed(SeedTag::Eval));
        let k = kl_estimate(params, &mut s, train, prior.as_ref(), n)?;
        Some(KlSummary {
            mean: k.mean,
            stderr: k.stderr,
            n: k.n,
        })
    } else {
        None
    };
    let mean_b = terms.mean_b();
    Ok(TrainSummary {
        experiment: cfg.experiment.name().to_string(),
        alpha: train.alpha,
        sigma: train.sigma,
        iterations: train.iterations,
        eval_samples: n,
        objective: terms.j,
        mean_c: terms.mean_c(),
        mean_b,
        field_energy: energy,
        diffusion_correction: mean_b - energy,
        kl,
        final_batch_objective: None,
    })
}

/// `field.json`, `history.csv`, `summary.json`, `config.toml`,
/// `manifest.json`.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainSummary, CliError> {
    create_dir(out)?;
    let manifest = Manifest::new("train", cfg)?;
    let o = fit(cfg, Some(out))?;
    Checkpoint::new(
        Some(cfg.train.net.clone()),
        &o.params,
        cfg.train.seed,
        cfg.train.iterations as u64,
    )
    .save(&out.join(FIELD_FILE))?;
    write_history_csv(&out.join("history.csv"), &o.history)?;
    let mut summary = evaluate(cfg, &o.params)?;
    summary.final_batch_objective = o.history.last().map(|r| r.j);
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    manifest.finish(out)?;
    Ok(summary)
}

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ScoreError, ScoreMatchConfig, ScoreMode, TrajectoryDataset};
use crate::flow::sample_probes;
use crate::nn::{
    AdamConfig, AdamState, DivergenceMode, JetShape, JetWorkspace, NnError, ParamVector,
    TimeCotangent, TimeFeatures,
};
use crate::train::probe_seed;
use crate::util::{fmt_real, run_indexed};

#[derive(Clone, Debug)]
pub struct ScoreOutput {
    pub params: ParamVector,
    /// Minibatch objective per iteration.
    pub history: Vec<f64>,
    pub adam: AdamState,
}

/// `w (l^T grad s l)` and `w (l^T s)^2 / 2`, batch means.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JsmTerms {
    pub trace: f64,
    pub square: f64,
}

impl JsmTerms {
    pub fn total(&self) -> f64 {
        self.trace + self.square
    }
}

#[derive(Default)]
struct PointWorkspace {
    s: JetWorkspace,
    f: JetWorkspace,
    dirs: Vec<f64>,
    bar: Vec<f64>,
    sv: Vec<f64>,
    ds: Vec<f64>,
}

struct PointOut {
    trace: f64,
    square: f64,
    grad: Vec<f64>,
    tcot: Option<TimeCotangent>,
}

struct Setup<'a> {
    s_params: &'a ParamVector,
    f_params: &'a ParamVector,
    s_times: Vec<TimeFeatures>,
    f_times: Vec<TimeFeatures>,
    weights: Vec<f64>,
    /// `1 / sigma^2` in drift mode.
    drift_scale: Option<f64>,
}

fn check_inputs(
    s_params: &ParamVector,
    f_params: &ParamVector,
    batch: &TrajectoryDataset,
    cfg: &ScoreMatchConfig,
) -> Result<(), ScoreError> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(ScoreError::EmptyDataset);
    }
    let d = batch.dim;
    if s_params.dim() != d || f_params.dim() != d {
        return Err(ScoreError::InvalidConfig(format!(
            "networks of dimension {} and {} for data of dimension {d}",
            s_params.dim(),
            f_params.dim()
        )));
    }
    Ok(())
}

impl<'a> Setup<'a> {
    fn new(
        s_params: &'a ParamVector,
        f_params: &'a ParamVector,
        batch: &TrajectoryDataset,
        cfg: &ScoreMatchConfig,
    ) -> Self {
        let grid = batch.grid;
        let drift_scale = match cfg.mode {
            ScoreMode::ParameterizeScore => None,
            ScoreMode::ParameterizeDrift => Some(1.0 / (cfg.sigma * cfg.sigma)),
        };
        let s_times = (0..=grid.steps)
            .map(|k| s_params.time_features(grid.node(k)))
            .collect();
        let f_times = if drift_scale.is_some() {
            (0..=grid.steps)
                .map(|k| f_params.time_features(grid.node(k)))
                .collect()
        } else {
            Vec::new()
        };
        let weights = (0..=grid.steps)
            .map(|k| cfg.weight.eval(grid.node(k), grid.horizon()))
            .collect();
        Self {
            s_params,
            f_params,
            s_times,
            f_times,
            weights,
            drift_scale,
        }
    }

    /// `w(t) [tr-term + square-term]` at one point; with `want_grad` the
    /// parameter gradient is returned as well.
    fn point(
        &self,
        x: &[f64],
        k: usize,
        probes: Option<&[f64]>,
        want_grad: bool,
        ws: &mut PointWorkspace,
    ) -> PointOut {
        let d = x.len();
        match probes {
            Some(p) => {
                ws.dirs.clear();
                ws.dirs.extend_from_slice(p);
            }
            None => {
                ws.dirs.clear();
                ws.dirs.resize(d * d, 0.0);
                for i in 0..d {
                    ws.dirs[i * d + i] = 1.0;
                }
            }
        }
        let kp = ws.dirs.len() / d;
        let shape = JetShape::first(kp);
        let nc = shape.ncomp();
        let w = self.weights[k];
        self.s_params
            .jet_forward(&self.s_times[k], x, &ws.dirs, shape, &mut ws.s);
        ws.sv.clear();
        ws.ds.clear();
        ws.sv.resize(d, 0.0);
        ws.ds.resize(d * kp, 0.0);
        let o = ws.s.output();
        for i in 0..d {
            ws.sv[i] = o[i * nc];
            for p in 0..kp {
                ws.ds[i * kp + p] = o[i * nc + 1 + p];
            }
        }
        if let Some(c) = self.drift_scale {
            self.f_params
                .jet_forward(&self.f_times[k], x, &ws.dirs, shape, &mut ws.f);
            let fo = ws.f.output();
            for i in 0..d {
                ws.sv[i] = (ws.sv[i] - fo[i * nc]) * c;
                for p in 0..kp {
                    ws.ds[i * kp + p] = (ws.ds[i * kp + p] - fo[i * nc + 1 + p]) * c;
                }
            }
        }
        ws.bar.clear();
        ws.bar.resize(d * nc, 0.0);
        let (tr, sq);
        if probes.is_some() {
            let kf = kp as f64;
            let mut t = 0.0;
            let mut q = 0.0;
            for p in 0..kp {
                let l = &ws.dirs[p * d..(p + 1) * d];
                let proj: f64 = l.iter().zip(&ws.sv).map(|(a, b)| a * b).sum();
                q += proj * proj;
                for i in 0..d {
                    t += l[i] * ws.ds[i * kp + p];
                    ws.bar[i * nc] += w * proj * l[i] / kf;
                    ws.bar[i * nc + 1 + p] = w * l[i] / kf;
                }
            }
            tr = t / kf;
            sq = 0.5 * q / kf;
        } else {
            tr = (0..d).map(|p| ws.ds[p * kp + p]).sum::<f64>();
            sq = 0.5 * ws.sv.iter().map(|v| v * v).sum::<f64>();
            for i in 0..d {
                ws.bar[i * nc] = w * ws.sv[i];
                ws.bar[i * nc + 1 + i] = w;
            }
        }
        let (trace, square) = (w * tr, w * sq);
        if !want_grad {
            return PointOut {
                trace,
                square,
                grad: Vec::new(),
                tcot: None,
            };
        }
        if let Some(c) = self.drift_scale {
            ws.bar.iter_mut().for_each(|b| *b *= c);
        }
        let mut grad = vec![0.0; self.s_params.len()];
        let mut tcot = TimeCotangent::zeros_like(&self.s_times[k]);
        let bar = std::mem::take(&mut ws.bar);
        self.s_params
            .jet_backward(&self.s_times[k], &mut ws.s, &bar, &mut grad, &mut tcot);
        ws.bar = bar;
        PointOut {
            trace,
            square,
            grad,
            tcot: Some(tcot),
        }
    }
}

fn batch_pass(
    s_params: &ParamVector,
    f_params: &ParamVector,
    batch: &TrajectoryDataset,
    cfg: &ScoreMatchConfig,
    iteration: usize,
    want_grad: bool,
) -> Result<(JsmTerms, Vec<f64>), ScoreError> {
    check_inputs(s_params, f_params, batch, cfg)?;
    let setup = Setup::new(s_params, f_params, batch, cfg);
    let d = batch.dim;
    let probe_cfg = match cfg.trace {
        DivergenceMode::Exact => None,
        DivergenceMode::Hutchinson(mut p) => {
            p.seed = probe_seed(p.seed ^ cfg.seed.rotate_left(32), iteration);
            Some(p)
        }
    };
    let n = batch.len();
    let outs = run_indexed(n, cfg.workers, PointWorkspace::default, |i, ws| {
        let probes = probe_cfg.map(|p| sample_probes(&p, d, i));
        setup.point(
            batch.point(i),
            batch.nodes[i],
            probes.as_deref(),
            want_grad,
            ws,
        )
    });
    let mut terms = JsmTerms {
        trace: 0.0,
        square: 0.0,
    };
    let mut grad = if want_grad {
        vec![0.0; s_params.len()]
    } else {
        Vec::new()
    };
    let mut tcot: Vec<Option<TimeCotangent>> = vec![None; batch.grid.steps + 1];
    for (i, out) in outs.into_iter().enumerate() {
        terms.trace += out.trace;
        terms.square += out.square;
        if let Some(tc) = out.tcot {
            grad.iter_mut().zip(&out.grad).for_each(|(g, v)| *g += v);
            match &mut tcot[batch.nodes[i]] {
                Some(acc) => acc.add_assign(&tc),
                slot => *slot = Some(tc),
            }
        }
    }
    if want_grad {
        for (k, tc) in tcot.iter().enumerate() {
            if let Some(tc) = tc {
                s_params.time_features_backward(&setup.s_times[k], tc, &mut grad);
            }
        }
        grad.iter_mut().for_each(|g| *g /= n as f64);
    }
    terms.trace /= n as f64;
    terms.square /= n as f64;
    Ok((terms, grad))
}

/// Score-matching objective on `batch`. Probes, when used, are drawn from a
/// stream keyed by the probe seed, `cfg.seed` and `iteration`.
pub fn jsm_loss(
    s_params: &ParamVector,
    f_params: &ParamVector,
    batch: &TrajectoryDataset,
    cfg: &ScoreMatchConfig,
    iteration: usize,
) -> Result<f64, ScoreError> {
    jsm_terms(s_params, f_params, batch, cfg, iteration).map(|t| t.total())
}

/// The two parts of [`jsm_loss`], each averaged over the batch.
pub fn jsm_terms(
    s_params: &ParamVector,
    f_params: &ParamVector,
    batch: &TrajectoryDataset,
    cfg: &ScoreMatchConfig,
    iteration: usize,
) -> Result<JsmTerms, ScoreError> {
    batch_pass(s_params, f_params, batch, cfg, iteration, false).map(|(t, _)| t)
}

/// As [`jsm_loss`], plus the gradient with respect to `s_params`.
pub fn jsm_loss_and_grad(
    s_params: &ParamVector,
    f_params: &ParamVector,
    batch: &TrajectoryDataset,
    cfg: &ScoreMatchConfig,
    iteration: usize,
) -> Result<(f64, Vec<f64>), ScoreError> {
    batch_pass(s_params, f_params, batch, cfg, iteration, true).map(|(t, g)| (t.total(), g))
}

/// Adam on random minibatches of `dataset`, from the seeded initialization.
pub fn train_score(
    f_params: &ParamVector,
    cfg: &ScoreMatchConfig,
    dataset: &TrajectoryDataset,
) -> Result<ScoreOutput, ScoreError> {
    let init = ParamVector::init(&cfg.net, cfg.seed)?;
    train_score_from(f_params, cfg, dataset, init, &mut |_, _| {})
}

/// Adam from `init`; `observer(iteration, loss)` runs after every
/// minibatch evaluation.
pub fn train_score_from(
    f_params: &ParamVector,
    cfg: &ScoreMatchConfig,
    dataset: &TrajectoryDataset,
    init: ParamVector,
    observer: &mut dyn FnMut(usize, f64),
) -> Result<ScoreOutput, ScoreError> {
    check_inputs(&init, f_params, dataset, cfg)?;
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5C0E_5C0E);
    let mut params = init;
    let mut adam = AdamState::new(params.len());
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut idx = vec![0; cfg.batch_size];
    for it in 0..cfg.iterations {
        idx.iter_mut()
            .for_each(|i| *i = rng.random_range(0..dataset.len()));
        let batch = dataset.subset(&idx);
        let (terms, grad) = batch_pass(&params, f_params, &batch, cfg, it, true)?;
        let loss = terms.total();
        let diverged = |reason: String, p: &ParamVector| ScoreError::Diverged {
            iteration: it,
            reason,
            last_good: Box::new(p.clone()),
        };
        if !loss.is_finite() {
            return Err(diverged("non-finite loss".into(), &params));
        }
        observer(it, loss);
        history.push(loss);
        let before = params.clone();
        match adam.step(&mut params, &grad, &adam_cfg) {
            Ok(()) => {}
            Err(NnError::NonFinite(m)) => return Err(diverged(m, &before)),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(ScoreOutput {
        params,
        history,
        adam,
    })
}

/// `iter, loss`.
pub fn write_score_history_csv(path: &Path, history: &[f64]) -> Result<(), ScoreError> {
    let mut out = String::from("iter,loss\n");
    for (i, l) in history.iter().enumerate() {
        let _ = writeln!(out, "{i},{}", fmt_real(*l));
    }
    std::fs::write(path, out)?;
    Ok(())
}

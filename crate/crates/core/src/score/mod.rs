//! Drift recovery by sliced score matching on generated trajectories.
//!
//! A trained field `f` is run backward from terminal Gaussian draws; the
//! visited points, tagged with their node times, form the dataset. A second
//! network is fitted by minimizing
//!
//! ```text
//! J = mean_(x, t) w(t) E_l [ l^T (grad s) l + (l^T s)^2 / 2 ]
//! ```
//!
//! and the drift is `u = f + sigma^2 s`. In drift mode the network outputs
//! `u` directly and `s = (u - f) / sigma^2` enters the objective.

mod dataset;
mod drift;
mod jsm;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{FlowError, TimeGrid};
use crate::nn::{DivergenceMode, NetSpec, NnError, ParamVector, ProbeConfig, ProbeDist};

pub use dataset::{generate_trajectory_dataset, TrajectoryDataset};
pub use drift::{recover_drift, write_drift_csv, DriftPoint, RecoveredDrift};
pub use jsm::{
    jsm_loss, jsm_loss_and_grad, jsm_terms, train_score, train_score_from, write_score_history_csv,
    JsmTerms, ScoreOutput,
};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("invalid score-matching config: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    /// `last_good` holds the parameters before the failing iteration.
    #[error("score training diverged at iteration {iteration}: {reason}")]
    Diverged {
        iteration: usize,
        reason: String,
        last_good: Box<ParamVector>,
    },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// What the second network outputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// The score `s`; the drift is `f + sigma^2 s`.
    #[default]
    ParameterizeScore,
    /// The drift `u`; needs `sigma > 0`.
    ParameterizeDrift,
}

/// Weight `w(t)` on the node times.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TimeWeight {
    Constant {
        value: f64,
    },
    /// Linear from `start` at `t = 0` to `end` at `t = T`.
    Linear {
        start: f64,
        end: f64,
    },
}

impl Default for TimeWeight {
    fn default() -> Self {
        TimeWeight::Constant { value: 1.0 }
    }
}

impl TimeWeight {
    pub fn eval(&self, t: f64, horizon: f64) -> f64 {
        match *self {
            TimeWeight::Constant { value } => value,
            TimeWeight::Linear { start, end } => start + (end - start) * t / horizon,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreMatchConfig {
    pub horizon: f64,
    /// Node times are `k T / steps`, `k = 0..=steps`.
    pub steps: usize,
    pub weight: TimeWeight,
    /// `Exact` uses the full Jacobian trace and `|s|^2`; `Hutchinson` draws
    /// fresh probes for every sample and iteration.
    pub trace: DivergenceMode,
    pub batch_size: usize,
    #[serde(alias = "epochs")]
    pub iterations: usize,
    pub lr: f64,
    pub sigma: f64,
    pub mode: ScoreMode,
    pub net: NetSpec,
    pub seed: u64,
    /// Paths generated for the dataset.
    pub n_paths: usize,
    pub workers: usize,
}

impl Default for ScoreMatchConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            steps: 20,
            weight: TimeWeight::default(),
            trace: DivergenceMode::Hutchinson(ProbeConfig {
                dist: ProbeDist::Rademacher,
                count: 1,
                seed: 0,
            }),
            batch_size: 1024,
            iterations: 2000,
            lr: 3e-3,
            sigma: 1.0,
            mode: ScoreMode::ParameterizeScore,
            net: NetSpec::new(1, 32),
            seed: 0,
            n_paths: 20_000,
            workers: 1,
        }
    }
}

impl ScoreMatchConfig {
    pub fn validate(&self) -> Result<(), ScoreError> {
        let bad = |m: String| Err(ScoreError::InvalidConfig(m));
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if self.steps == 0 || self.batch_size == 0 {
            return bad("steps and batch_size must be positive".into());
        }
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return bad(format!("sigma must be nonnegative, got {}", self.sigma));
        }
        if self.mode == ScoreMode::ParameterizeDrift && self.sigma == 0.0 {
            return bad(
                "sigma = 0 divides by zero in parameterize_drift mode; use mode = \
                 \"parameterize_score\""
                    .into(),
            );
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if let DivergenceMode::Hutchinson(p) = self.trace {
            if p.count == 0 {
                return bad("probe count must be at least 1".into());
            }
        }
        self.net.validate()?;
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid, ScoreError> {
        Ok(TimeGrid::new(self.horizon, self.steps)?)
    }
}

//! Relaxed bridge objective and its training loop.
//!
//! For a sample `x ~ rho_0` with trajectory `z`, log-determinant `l` and
//! score `s` on the integrator grid,
//!
//! ```text
//! C(x) = -l(x, T) - log rho_1(z(x, T))
//! B(x) = h sum_k w_k |f(z_k, t_k) + sigma^2 s_k|^2 / 2      (trapezoid)
//! J    = mean(alpha C + B)
//! ```
//!
//! With a prior potential the transport field is `F = f - grad U`; `f`
//! stays the control term in `B`.

mod data;
mod fit;
mod loss;
mod potential;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::Gaussian;
use crate::flow::FlowError;
use crate::nn::{DivergenceMode, NetSpec, NnError, ParamVector};

pub use data::{DataSampler, SamplerKind};
pub(crate) use fit::probe_seed;
pub use fit::{
    field_energy, kl_estimate, loss_and_grad, loss_terms, train, train_from, write_history_csv,
    HistoryRow, KlEstimate, LossTerms, TrainOutput,
};
pub use potential::{double_well_potential, Potential, PotentialDerivs};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite trajectory for sample {sample} at step {step}")]
    NonFinite { sample: usize, step: usize },
    /// Training stopped; `last_good` holds the parameters before the failing
    /// iteration.
    #[error("training diverged at iteration {iteration}: {reason}")]
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

/// Terminal Gaussian `N(mean, diag(var))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerminalSpec {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub sigma: f64,
    pub horizon: f64,
    /// RK4 steps on `[0, horizon]`.
    pub steps: usize,
    pub batch_size: usize,
    #[serde(alias = "epochs")]
    pub iterations: usize,
    pub lr: f64,
    pub divergence: DivergenceMode,
    pub seed: u64,
    pub net: NetSpec,
    /// `None` is the standard normal.
    pub terminal: Option<TerminalSpec>,
    /// Threads for the per-sample passes; results do not depend on it.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            sigma: 1.0,
            horizon: 1.0,
            steps: 100,
            batch_size: 512,
            iterations: 3000,
            lr: 1e-3,
            divergence: DivergenceMode::Exact,
            seed: 0,
            net: NetSpec::new(1, 32),
            terminal: None,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return bad(format!("sigma must be nonnegative, got {}", self.sigma));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if self.steps == 0 || self.batch_size == 0 {
            return bad("steps and batch_size must be positive".into());
        }
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        self.net.validate()?;
        if let Some(t) = &self.terminal {
            if t.mean.len() != self.net.dim || t.var.len() != self.net.dim {
                return bad("terminal mean/var must match the net dimension".into());
            }
            if t.var.iter().any(|v| !(*v > 0.0)) {
                return bad("terminal variances must be positive".into());
            }
        }
        Ok(())
    }

    pub fn terminal_density(&self) -> Gaussian {
        match &self.terminal {
            Some(t) => Gaussian::new(t.mean.clone(), t.var.clone()),
            None => Gaussian::standard(self.net.dim),
        }
    }
}

//! Fixed-step integrators for the coupled flow system.
//!
//! Along each trajectory of `dz/dt = F(z, t)`:
//!
//! ```text
//! dl/dt = div F(z, t)                          l(0) = 0
//! ds/dt = -grad(div F)(z, t) - J_F(z, t)^T s   s(T) = grad log rho_1(z(T))
//! ```
//!
//! `(z, l)` is integrated forward with RK4; `s` backward with RK4, where the
//! stage points between nodes come from cubic Hermite interpolation of `z`
//! with the stored `F` values as slopes.

mod field;
mod integrate;
mod io;
mod sde;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::NnError;

pub use field::{sample_probes, FieldWorkspace, FlowField, PointEval};
pub use integrate::{
    fill_nodes, forward_sample, generative_path, integrate_forward, integrate_score_backward,
    rk4_step, sample_generative, score_sample, SampleRecord,
};
pub use io::write_trajectory_csv;
pub use sde::sample_sde_paths;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("non-finite state at sample {sample}, step {step}")]
    NonFinite { sample: usize, step: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("trajectory grid does not match")]
    GridMismatch,
    #[error("invalid step size {0}")]
    InvalidStep(f64),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Uniform nodes `t_k = t0 + k (t1 - t0) / steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub t1: f64,
    pub steps: usize,
}

impl TimeGrid {
    /// `[0, horizon]`.
    pub fn new(horizon: f64, steps: usize) -> Result<Self, FlowError> {
        Self::span(0.0, horizon, steps)
    }

    pub fn span(t0: f64, t1: f64, steps: usize) -> Result<Self, FlowError> {
        let g = Self { t0, t1, steps };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        if self.steps == 0 {
            return Err(FlowError::InvalidGrid("steps must be positive".into()));
        }
        if !(self.t1 > self.t0) || !self.t0.is_finite() || !self.t1.is_finite() {
            return Err(FlowError::InvalidGrid("need t0 < t1".into()));
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.t1 - self.t0
    }

    pub fn dt(&self) -> f64 {
        self.horizon() / self.steps as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        self.half(2 * k)
    }

    /// `t = t0 + i dt / 2`.
    pub fn half(&self, i: usize) -> f64 {
        if i == 2 * self.steps {
            self.t1
        } else {
            self.t0 + 0.5 * i as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.node(k)).collect()
    }
}

/// Per-sample node values, sample-major:
/// `z[(b * (steps + 1) + k) * d + i]`, `ell[b * (steps + 1) + k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryBatch {
    pub dim: usize,
    pub grid: TimeGrid,
    pub batch: usize,
    pub z: Vec<f64>,
    pub ell: Vec<f64>,
    /// Filled by [`integrate_score_backward`].
    pub s: Option<Vec<f64>>,
}

impl TrajectoryBatch {
    fn row(&self, b: usize, k: usize) -> usize {
        b * (self.grid.steps + 1) + k
    }

    pub fn z_at(&self, b: usize, k: usize) -> &[f64] {
        let r = self.row(b, k) * self.dim;
        &self.z[r..r + self.dim]
    }

    pub fn ell_at(&self, b: usize, k: usize) -> f64 {
        self.ell[self.row(b, k)]
    }

    pub fn s_at(&self, b: usize, k: usize) -> Option<&[f64]> {
        let r = self.row(b, k) * self.dim;
        self.s.as_ref().map(|s| &s[r..r + self.dim])
    }

    /// `z` at the final node for every sample, `batch x d`.
    pub fn terminal(&self) -> Vec<f64> {
        (0..self.batch)
            .flat_map(|b| self.z_at(b, self.grid.steps).to_vec())
            .collect()
    }
}

//! Small time-conditioned MLP with exact derivative queries.
//!
//! The network is evaluated through truncated Taylor jets ([`jet`]), which
//! give values, Jacobians and second derivatives in the input in a single
//! pass. Parameter gradients come from the hand-written adjoint of that pass;
//! [`tape`] provides a general scalar reverse-mode tape used for ad hoc
//! losses and as an independent check.

pub mod adam;
pub mod checkpoint;
pub mod jet;
mod ops;
pub mod params;
pub mod tape;
pub mod time;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use jet::{JetShape, JetWorkspace};
pub use ops::{
    divergence, divergence_probe_values, draw_probes, eval_field, fill_probes, grad_divergence,
    jacobian, jacobian_transpose_apply, DivergenceMode,
};
pub use params::{LayerDesc, Layout, ParamVector};
pub use tape::{loss_backward, Recorded, Tape, Var};
pub use time::{time_features_raw, TimeCotangent, TimeFeatures};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("tape has no output; call Tape::finalize first")]
    TapeNotFinalized,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Architecture of a field network `R^d x [0, T] -> R^d`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub dim: usize,
    pub hidden: usize,
    /// Number of ConcatSquash layers.
    pub layers: usize,
    /// Sine/cosine frequency pairs in the time features.
    pub freqs: usize,
    /// Width of the one-layer time-embedding MLP.
    pub embed_width: usize,
}

impl NetSpec {
    pub fn new(dim: usize, hidden: usize) -> Self {
        Self {
            dim,
            hidden,
            layers: 3,
            freqs: 4,
            embed_width: hidden,
        }
    }

    pub fn with_layers(mut self, layers: usize) -> Self {
        self.layers = layers;
        self
    }

    pub fn with_freqs(mut self, freqs: usize) -> Self {
        self.freqs = freqs;
        self
    }

    pub fn with_embed_width(mut self, width: usize) -> Self {
        self.embed_width = width;
        self
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.dim == 0 || self.hidden == 0 || self.layers == 0 || self.embed_width == 0 {
            return Err(NnError::InvalidSpec(format!(
                "dim, hidden, layers and embed_width must be positive: {self:?}"
            )));
        }
        if self.freqs == 0 {
            return Err(NnError::InvalidSpec("at least one time frequency".into()));
        }
        Ok(())
    }
}

/// Distribution of Hutchinson probe vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeDist {
    Gaussian,
    Rademacher,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub dist: ProbeDist,
    pub count: usize,
    pub seed: u64,
}

impl ProbeConfig {
    pub fn new(dist: ProbeDist, count: usize, seed: u64) -> Result<Self, NnError> {
        if count == 0 {
            return Err(NnError::InvalidSpec(
                "probe count must be at least 1".into(),
            ));
        }
        Ok(Self { dist, count, seed })
    }
}

//! JSON checkpoints: `{spec, layout, values, seed, step}`.
//!
//! Reals are written by `serde_json`, which emits the shortest string that
//! parses back to the same `f64`, so a save/load cycle is lossless.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Layout, NetSpec, NnError, ParamVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Absent for hand-built layouts (e.g. affine test fields).
    pub spec: Option<NetSpec>,
    pub layout: Layout,
    pub values: Vec<f64>,
    pub seed: u64,
    pub step: u64,
}

impl Checkpoint {
    pub fn new(spec: Option<NetSpec>, params: &ParamVector, seed: u64, step: u64) -> Self {
        Self {
            spec,
            layout: params.layout().clone(),
            values: params.values().to_vec(),
            seed,
            step,
        }
    }

    pub fn params(&self) -> Result<ParamVector, NnError> {
        if let Some(spec) = &self.spec {
            let expected = Layout::from_spec(spec)?;
            if expected != self.layout {
                return Err(NnError::Checkpoint("layout does not match spec".into()));
            }
        }
        ParamVector::from_values(self.layout.clone(), self.values.clone())
    }

    pub fn to_json(&self) -> Result<String, NnError> {
        serde_json::to_string_pretty(self).map_err(|e| NnError::Checkpoint(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self, NnError> {
        serde_json::from_str(s).map_err(|e| NnError::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        std::fs::write(path, self.to_json()?).map_err(|e| NnError::Checkpoint(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let s = std::fs::read_to_string(path).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        Self::from_json(&s)
    }
}

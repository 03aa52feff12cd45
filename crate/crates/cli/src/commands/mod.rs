pub mod compare;
pub mod grid;
pub mod recover;
pub mod sample;
pub mod sweep;
pub mod train;

use std::fs;
use std::path::Path;

use sbp_core::nn::{Checkpoint, ParamVector};
use serde::Serialize;

use crate::error::CliError;

pub const FIELD_FILE: &str = "field.json";
pub const SCORE_FILE: &str = "score.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TRAIN_SUMMARY_FILE: &str = "train_summary.json";
pub const GRID_STATE_FILE: &str = "grid_state.json";

pub(crate) fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Io(format!("cannot parse {}: {e}", path.display())))
}

/// Loads a network checkpoint and checks its dimension.
pub fn load_net(path: &Path, dim: usize) -> Result<ParamVector, CliError> {
    let p = Checkpoint::load(path)?.params()?;
    if p.dim() != dim {
        return Err(CliError::Config(format!(
            "{}: network dimension {} does not match the experiment dimension {dim}",
            path.display(),
            p.dim()
        )));
    }
    Ok(p)
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub(crate) fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Tensor grid of `n` points per axis on `[lo, hi]^dim`, row-major.
pub(crate) fn lattice(dim: usize, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let axis: Vec<f64> = (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect();
    let total = n.pow(dim as u32);
    let mut out = Vec::with_capacity(total * dim);
    for j in 0..total {
        let mut rest = j;
        for _ in 0..dim {
            out.push(axis[rest % n]);
            rest /= n;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_covers_the_box() {
        let p = lattice(2, -1.0, 1.0, 3);
        assert_eq!(p.len(), 18);
        assert_eq!(&p[..2], &[-1.0, -1.0]);
        assert_eq!(&p[2..4], &[0.0, -1.0]);
        assert_eq!(&p[16..], &[1.0, 1.0]);
    }

    #[test]
    fn std_dev_is_the_sample_estimate() {
        assert_eq!(std_dev(&[1.0]), 0.0);
        assert!((std_dev(&[1.0, 3.0]) - 2f64.sqrt()).abs() < 1e-15);
    }
}

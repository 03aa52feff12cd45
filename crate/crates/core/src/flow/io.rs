use std::fmt::Write as _;
use std::path::Path;

use super::{FlowError, TrajectoryBatch};
use crate::util::fmt_real;

/// `sample_id, k, t, z_1..z_d, ell, s_1..s_d`, one row per sample and node.
/// The score columns are empty when `s` is unset.
pub fn write_trajectory_csv(path: &Path, traj: &TrajectoryBatch) -> Result<(), FlowError> {
    let d = traj.dim;
    let mut out = String::from("sample_id,k,t");
    for i in 1..=d {
        let _ = write!(out, ",z_{i}");
    }
    out.push_str(",ell");
    for i in 1..=d {
        let _ = write!(out, ",s_{i}");
    }
    out.push('\n');
    for b in 0..traj.batch {
        for k in 0..=traj.grid.steps {
            let _ = write!(out, "{b},{k},{}", fmt_real(traj.grid.node(k)));
            for v in traj.z_at(b, k) {
                let _ = write!(out, ",{}", fmt_real(*v));
            }
            let _ = write!(out, ",{}", fmt_real(traj.ell_at(b, k)));
            match traj.s_at(b, k) {
                Some(s) => s.iter().for_each(|v| {
                    let _ = write!(out, ",{}", fmt_real(*v));
                }),
                None => out.push_str(&",".repeat(d)),
            }
            out.push('\n');
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

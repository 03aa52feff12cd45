//! CSV dumps of grid fields and solver metrics.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{GridError, GridSpec, GridState, Mesh, SolveReport};
use crate::util::fmt_real;

/// One file per time slice, `fields_tNNNN.csv` in `dir`, with columns
/// `cell, x_1..x_d, rho, m_1..m_d, phi`. Fluxes are averaged from the two
/// faces of each cell; `m` and `phi` are empty on the terminal slice.
pub fn write_fields_csv(
    dir: &Path,
    spec: &GridSpec,
    state: &GridState,
) -> Result<Vec<PathBuf>, GridError> {
    fs::create_dir_all(dir)?;
    let mesh = Mesh::from_spec(spec);
    let d = spec.dim;
    let mut paths = Vec::with_capacity(spec.nt + 1);
    for t in 0..=spec.nt {
        let mut s = String::from("cell");
        for a in 1..=d {
            let _ = write!(s, ",x_{a}");
        }
        s.push_str(",rho");
        for a in 1..=d {
            let _ = write!(s, ",m_{a}");
        }
        s.push_str(",phi\n");
        let rho = state.rho_slice(t);
        for j in 0..mesh.nc {
            let _ = write!(s, "{j}");
            for x in spec.cell_center(j) {
                let _ = write!(s, ",{}", fmt_real(x));
            }
            let _ = write!(s, ",{}", fmt_real(rho[j]));
            if t < spec.nt {
                let m = state.m_slice(t);
                for a in 0..d {
                    let ma = &m[a * mesh.nf..(a + 1) * mesh.nf];
                    let avg = 0.5 * (ma[mesh.left_face[a][j]] + ma[mesh.right_face[a][j]]);
                    let _ = write!(s, ",{}", fmt_real(avg));
                }
                let _ = write!(s, ",{}", fmt_real(state.phi_slice(t)[j]));
            } else {
                s.push_str(&",".repeat(d + 1));
            }
            s.push('\n');
        }
        let path = dir.join(format!("fields_t{t:04}.csv"));
        fs::write(&path, s)?;
        paths.push(path);
    }
    Ok(paths)
}

/// `iteration, residual, objective`; the objective column is filled on the
/// iterations where it was recorded.
pub fn write_metrics_csv(path: &Path, report: &SolveReport) -> Result<(), GridError> {
    let mut s = String::from("iteration,residual,objective\n");
    let mut objs = report.objectives.iter().peekable();
    for (i, r) in report.residuals.iter().enumerate() {
        let _ = write!(s, "{i},{}", fmt_real(*r));
        if let Some((it, o)) = objs.peek() {
            if *it == i {
                let _ = write!(s, ",{}", fmt_real(*o));
                objs.next();
            } else {
                s.push(',');
            }
        } else {
            s.push(',');
        }
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

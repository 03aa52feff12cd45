//! Score and drift read off a grid solution.

use super::{GridSpec, GridState, Mesh, NONE, RHO_FLOOR};

/// A cell-centred vector field with a validity mask.
///
/// `values[j * dim + a]` is component `a` at cell `j`; masked cells hold 0.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedField {
    pub dim: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl MaskedField {
    pub fn at(&self, j: usize) -> Option<&[f64]> {
        self.valid[j].then(|| &self.values[j * self.dim..(j + 1) * self.dim])
    }
}

/// `f` sampled at cell centres and scaled to unit discrete mass.
pub fn sample_density(spec: &GridSpec, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut rho: Vec<f64> = (0..spec.cells()).map(|j| f(&spec.cell_center(j))).collect();
    let mass: f64 = rho.iter().sum::<f64>() * spec.h().powi(spec.dim as i32);
    if mass > 0.0 {
        rho.iter_mut().for_each(|r| *r /= mass);
    }
    rho
}

/// Finite-difference `grad log rho`: central in the interior, one-sided at
/// the boundary. Cells touching a density at or below the floor are masked.
pub fn reference_score(dim: usize, nx: usize, rho: &[f64], h: f64) -> MaskedField {
    let mesh = Mesh::new(dim, nx);
    let mut values = vec![0.0; mesh.nc * dim];
    let mut valid = vec![true; mesh.nc];
    for j in 0..mesh.nc {
        if rho[j] <= RHO_FLOOR {
            valid[j] = false;
            continue;
        }
        for a in 0..dim {
            let p = mesh.prev[a][j];
            let n = mesh.next[a][j];
            let (lo, hi, span) = match (p != NONE, n != NONE) {
                (true, true) => (p, n, 2.0),
                (false, true) => (j, n, 1.0),
                (true, false) => (p, j, 1.0),
                (false, false) => (j, j, 1.0),
            };
            if rho[lo] <= RHO_FLOOR || rho[hi] <= RHO_FLOOR {
                valid[j] = false;
                break;
            }
            values[j * dim + a] = (rho[hi].ln() - rho[lo].ln()) / (span * h);
        }
        if !valid[j] {
            values[j * dim..(j + 1) * dim]
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
    }
    MaskedField { dim, values, valid }
}

/// Drift `m / rho` at each time slice `t = 0..nt`.
///
/// Every face flux is divided by the density of the cell it is paired with
/// in the kinetic term (the cell on its low side); the cell value averages
/// the face velocities on both sides, or takes the single interior one at
/// the domain boundary.
pub fn reference_drift(spec: &GridSpec, state: &GridState) -> Vec<MaskedField> {
    let mesh = Mesh::from_spec(spec);
    let d = spec.dim;
    let nf = mesh.nf;
    (0..spec.nt)
        .map(|t| {
            let rho = state.rho_slice(t);
            let m = state.m_slice(t);
            let mut values = vec![0.0; mesh.nc * d];
            let mut valid = vec![true; mesh.nc];
            for j in 0..mesh.nc {
                if rho[j] <= RHO_FLOOR {
                    valid[j] = false;
                    continue;
                }
                for a in 0..d {
                    let ma = &m[a * nf..(a + 1) * nf];
                    let mut sum = 0.0;
                    let mut count = 0.0;
                    let p = mesh.prev[a][j];
                    if p != NONE {
                        if rho[p] <= RHO_FLOOR {
                            valid[j] = false;
                        }
                        sum += ma[mesh.left_face[a][j]] / rho[p];
                        count += 1.0;
                    }
                    if mesh.next[a][j] != NONE {
                        sum += ma[mesh.right_face[a][j]] / rho[j];
                        count += 1.0;
                    }
                    values[j * d + a] = if count > 0.0 { sum / count } else { 0.0 };
                }
                if !valid[j] {
                    values[j * d..(j + 1) * d].iter_mut().for_each(|v| *v = 0.0);
                }
            }
            MaskedField {
                dim: d,
                values,
                valid,
            }
        })
        .collect()
}

//! Finite-difference operators on the staggered mesh.

use super::{Mesh, NONE};

/// `sum_a (m_a[right face] - m_a[left face]) / h` at every cell.
///
/// `m` holds `d` blocks of `(nx+1)^d` face values.
pub fn discrete_divergence(dim: usize, nx: usize, m: &[f64], h: f64) -> Vec<f64> {
    let mesh = Mesh::new(dim, nx);
    let mut out = vec![0.0; mesh.nc];
    divergence_into(&mesh, m, h, &mut out);
    out
}

pub(crate) fn divergence_into(mesh: &Mesh, m: &[f64], h: f64, out: &mut [f64]) {
    let nf = mesh.nf;
    for (j, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for a in 0..mesh.dim {
            let ma = &m[a * nf..(a + 1) * nf];
            acc += ma[mesh.right_face[a][j]] - ma[mesh.left_face[a][j]];
        }
        *o = acc / h;
    }
}

/// Face gradient of a cell field; zero on boundary faces.
pub fn discrete_gradient(dim: usize, nx: usize, phi: &[f64], h: f64) -> Vec<f64> {
    let mesh = Mesh::new(dim, nx);
    let nf = mesh.nf;
    let mut g = vec![0.0; dim * nf];
    for a in 0..dim {
        for j in 0..mesh.nc {
            let n = mesh.next[a][j];
            if n != NONE {
                g[a * nf + mesh.right_face[a][j]] = (phi[n] - phi[j]) / h;
            }
        }
    }
    g
}

/// Three-point Laplacian per axis with missing neighbours dropped, i.e.
/// homogeneous Neumann conditions. Symmetric.
pub fn neumann_laplacian(dim: usize, nx: usize, rho: &[f64], h: f64) -> Vec<f64> {
    let mesh = Mesh::new(dim, nx);
    let mut out = vec![0.0; mesh.nc];
    neumann_into(&mesh, rho, 1.0 / (h * h), &mut out);
    out
}

/// `out[j] = scale * (Neumann Laplacian stencil sum at j)`.
pub(crate) fn neumann_into(mesh: &Mesh, rho: &[f64], scale: f64, out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        let r = rho[j];
        let mut acc = 0.0;
        for a in 0..mesh.dim {
            let p = mesh.prev[a][j];
            let n = mesh.next[a][j];
            if p != NONE {
                acc += rho[p] - r;
            }
            if n != NONE {
                acc += rho[n] - r;
            }
        }
        *o = scale * acc;
    }
}

/// Boundary-flux term produced by eliminating ghost cells with the no-flux
/// condition: `-m/h` on a low boundary face, `+m/h` on a high one.
pub(crate) fn fold_into(mesh: &Mesh, m: &[f64], h: f64, out: &mut [f64]) {
    let nf = mesh.nf;
    for (j, o) in out.iter_mut().enumerate() {
        for a in 0..mesh.dim {
            let ma = &m[a * nf..(a + 1) * nf];
            if mesh.prev[a][j] == NONE {
                *o -= ma[mesh.left_face[a][j]] / h;
            }
            if mesh.next[a][j] == NONE {
                *o += ma[mesh.right_face[a][j]] / h;
            }
        }
    }
}

/// Laplacian with ghost cells folded in: three-point stencil in the
/// interior, and at a boundary cell the one-sided difference plus the
/// boundary-flux term, e.g. `(rho_1 - rho_0)/h^2 - m_0/h` on the left.
pub fn discrete_laplacian(dim: usize, nx: usize, rho: &[f64], m: &[f64], h: f64) -> Vec<f64> {
    let mesh = Mesh::new(dim, nx);
    let mut out = vec![0.0; mesh.nc];
    neumann_into(&mesh, rho, 1.0 / (h * h), &mut out);
    fold_into(&mesh, m, h, &mut out);
    out
}

/// `<f, g>_h = h^d sum f g`.
pub fn inner(f: &[f64], g: &[f64], h: f64, dim: usize) -> f64 {
    h.powi(dim as i32) * f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>()
}

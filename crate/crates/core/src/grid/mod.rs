//! Primal-dual solver for the discretized bridge problem on a regular grid.
//!
//! Unknowns live on a staggered space-time mesh over `[lo, hi]^d`, `d` in
//! {1, 2}: densities `rho_t` at cell centres for `t = 0..=nt`, fluxes `m_t`
//! on cell faces for `t = 0..nt`, and multipliers `phi_t` at cell centres
//! for `t = 0..nt`. The solver minimizes
//!
//! ```text
//! dt * h^d * sum_t sum_cells |m|^2 / (2 rho)
//! ```
//!
//! subject to the discrete Fokker-Planck equation
//!
//! ```text
//! (rho_{t+1} - rho_t) / dt + div m_t - diffusion(rho_t, m_t) = 0
//! ```
//!
//! with `rho_0` and `rho_nt` fixed.

mod cubic;
mod io;
mod ops;
mod pdhg;
mod reference;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cubic::{largest_real_cubic_root, largest_root_monic};
pub use io::{write_fields_csv, write_metrics_csv};
pub use ops::{
    discrete_divergence, discrete_gradient, discrete_laplacian, inner, neumann_laplacian,
};
pub use pdhg::{
    fp_residual, objective, pdhg_update_dual, pdhg_update_primal, solve, PrimalStats, SolveReport,
};
pub use reference::{reference_drift, reference_score, sample_density, MaskedField};

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("endpoint densities must be nonnegative")]
    NegativeDensity,
    #[error("endpoint masses differ: {0} vs {1}")]
    MassMismatch(f64, f64),
    #[error("degenerate cubic: leading coefficient {0}")]
    DegenerateCubic(f64),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Density floor used in the primal update and the objective.
pub const RHO_FLOOR: f64 = 1e-10;

/// Step sizes of the primal-dual iteration. The primal step may differ
/// between the density block and the flux block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Steps {
    pub mu_rho: f64,
    pub mu_m: f64,
    pub tau: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub nx: usize,
    pub nt: usize,
    pub lo: f64,
    pub hi: f64,
    pub horizon: f64,
    pub sigma: f64,
    /// `None` selects the diagonal (row/column-sum) step sizes.
    pub steps: Option<Steps>,
    /// Multiplies the primal steps and divides the dual step of the
    /// diagonal rule.
    pub step_scale: f64,
    pub max_iter: usize,
    /// Stop once the max-norm Fokker-Planck residual drops below this.
    pub tol: f64,
}

impl GridSpec {
    pub fn new(dim: usize, nx: usize, nt: usize, lo: f64, hi: f64, sigma: f64) -> Self {
        Self {
            dim,
            nx,
            nt,
            lo,
            hi,
            horizon: 1.0,
            sigma,
            steps: None,
            step_scale: 1.0,
            max_iter: 200_000,
            tol: 1e-5,
        }
    }

    pub fn h(&self) -> f64 {
        (self.hi - self.lo) / self.nx as f64
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.nt as f64
    }

    pub fn cells(&self) -> usize {
        self.nx.pow(self.dim as u32)
    }

    pub fn faces(&self) -> usize {
        (self.nx + 1).pow(self.dim as u32)
    }

    /// Centre of cell `j` along every axis.
    pub fn cell_center(&self, j: usize) -> Vec<f64> {
        let h = self.h();
        let mut rest = j;
        (0..self.dim)
            .map(|_| {
                let i = rest % self.nx;
                rest /= self.nx;
                self.lo + (i as f64 + 0.5) * h
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let bad = |m: &str| Err(GridError::InvalidSpec(m.to_string()));
        if !(1..=2).contains(&self.dim) {
            return bad("dim must be 1 or 2");
        }
        if self.nx < 2 || self.nt < 1 {
            return bad("need nx >= 2 and nt >= 1");
        }
        if !(self.hi > self.lo) || !self.lo.is_finite() || !self.hi.is_finite() {
            return bad("domain must satisfy lo < hi");
        }
        if !(self.horizon > 0.0) {
            return bad("horizon must be positive");
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return bad("sigma must be finite and nonnegative");
        }
        if let Some(s) = self.steps {
            if !(s.mu_rho > 0.0 && s.mu_m > 0.0 && s.tau > 0.0) {
                return bad("step sizes must be positive");
            }
        }
        if !(self.step_scale > 0.0) {
            return bad("step_scale must be positive");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        Ok(())
    }

    /// Explicit steps if set, otherwise the diagonal rule: each block's step
    /// is the reciprocal of its absolute row (dual) or column (primal) sum
    /// in the constraint operator.
    pub fn resolved_steps(&self) -> Steps {
        if let Some(s) = self.steps {
            return s;
        }
        let h = self.h();
        let dt = self.dt();
        let d = self.dim as f64;
        let s2 = self.sigma * self.sigma;
        let col_rho = 2.0 / dt + 4.0 * d * s2 / (h * h);
        let col_m = 2.0 / h;
        let row = 2.0 / dt + 2.0 * d / h + 4.0 * d * s2 / (h * h);
        Steps {
            mu_rho: self.step_scale / col_rho,
            mu_m: self.step_scale / col_m,
            tau: 1.0 / (self.step_scale * row),
        }
    }
}

/// Neighbour and face tables for the cell/face numbering.
///
/// Cells are numbered `j = j_0 + nx * j_1`; faces normal to axis `a` share
/// the `(nx+1)^d` numbering `k = k_0 + (nx+1) * k_1`, with cell `j` bounded
/// by faces `k_a = j_a` and `k_a = j_a + 1`.
#[derive(Clone, Debug)]
pub(crate) struct Mesh {
    pub dim: usize,
    pub nc: usize,
    pub nf: usize,
    /// `[axis][cell]`, `usize::MAX` at the domain boundary.
    pub prev: Vec<Vec<usize>>,
    pub next: Vec<Vec<usize>>,
    pub left_face: Vec<Vec<usize>>,
    pub right_face: Vec<Vec<usize>>,
}

pub(crate) const NONE: usize = usize::MAX;

impl Mesh {
    pub fn new(dim: usize, nx: usize) -> Self {
        let nc = nx.pow(dim as u32);
        let nf = (nx + 1).pow(dim as u32);
        let mut prev = vec![vec![NONE; nc]; dim];
        let mut next = vec![vec![NONE; nc]; dim];
        let mut left_face = vec![vec![0; nc]; dim];
        let mut right_face = vec![vec![0; nc]; dim];
        let cell_stride: Vec<usize> = (0..dim).map(|a| nx.pow(a as u32)).collect();
        let face_stride: Vec<usize> = (0..dim).map(|a| (nx + 1).pow(a as u32)).collect();
        for j in 0..nc {
            let idx: Vec<usize> = (0..dim).map(|a| (j / cell_stride[a]) % nx).collect();
            let base: usize = (0..dim).map(|a| idx[a] * face_stride[a]).sum();
            for a in 0..dim {
                if idx[a] > 0 {
                    prev[a][j] = j - cell_stride[a];
                }
                if idx[a] + 1 < nx {
                    next[a][j] = j + cell_stride[a];
                }
                left_face[a][j] = base;
                right_face[a][j] = base + face_stride[a];
            }
        }
        Self {
            dim,
            nc,
            nf,
            prev,
            next,
            left_face,
            right_face,
        }
    }

    pub fn from_spec(spec: &GridSpec) -> Self {
        Self::new(spec.dim, spec.nx)
    }
}

/// Primal and dual unknowns.
///
/// * `rho[t * nc + j]`, `t = 0..=nt`
/// * `m[(t * d + a) * nf + k]`, `t = 0..nt`, flux along axis `a` through face `k`
/// * `phi[t * nc + j]`, `t = 0..nt`
///
/// Faces normal to axis `a` whose other index equals `nx` do not exist and
/// stay zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridState {
    pub dim: usize,
    pub nx: usize,
    pub nt: usize,
    pub rho: Vec<f64>,
    pub m: Vec<f64>,
    pub phi: Vec<f64>,
}

impl GridState {
    /// Zero flux and multiplier, densities interpolated linearly in time.
    pub fn init(spec: &GridSpec, rho0: &[f64], rho1: &[f64]) -> Result<Self, GridError> {
        spec.validate()?;
        let nc = spec.cells();
        for r in [rho0, rho1] {
            if r.len() != nc {
                return Err(GridError::ShapeMismatch {
                    expected: nc,
                    got: r.len(),
                });
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(GridError::NonFinite("endpoint density".into()));
            }
            if r.iter().any(|&v| v < 0.0) {
                return Err(GridError::NegativeDensity);
            }
        }
        let cell = spec.h().powi(spec.dim as i32);
        let m0: f64 = rho0.iter().sum::<f64>() * cell;
        let m1: f64 = rho1.iter().sum::<f64>() * cell;
        if (m0 - m1).abs() > 1e-8 * m0.abs().max(m1.abs()).max(1.0) {
            return Err(GridError::MassMismatch(m0, m1));
        }
        let nt = spec.nt;
        let mut rho = Vec::with_capacity((nt + 1) * nc);
        for t in 0..=nt {
            if t == 0 {
                rho.extend_from_slice(rho0);
            } else if t == nt {
                rho.extend_from_slice(rho1);
            } else {
                let s = t as f64 / nt as f64;
                rho.extend(rho0.iter().zip(rho1).map(|(a, b)| (1.0 - s) * a + s * b));
            }
        }
        Ok(Self {
            dim: spec.dim,
            nx: spec.nx,
            nt,
            rho,
            m: vec![0.0; nt * spec.dim * spec.faces()],
            phi: vec![0.0; nt * nc],
        })
    }

    pub fn cells(&self) -> usize {
        self.nx.pow(self.dim as u32)
    }

    pub fn faces(&self) -> usize {
        (self.nx + 1).pow(self.dim as u32)
    }

    pub fn rho_slice(&self, t: usize) -> &[f64] {
        let nc = self.cells();
        &self.rho[t * nc..(t + 1) * nc]
    }

    /// All axes of the flux at time slice `t`, `d * nf` values.
    pub fn m_slice(&self, t: usize) -> &[f64] {
        let n = self.dim * self.faces();
        &self.m[t * n..(t + 1) * n]
    }

    pub fn phi_slice(&self, t: usize) -> &[f64] {
        let nc = self.cells();
        &self.phi[t * nc..(t + 1) * nc]
    }

    fn check(&self, spec: &GridSpec) -> Result<(), GridError> {
        if self.dim != spec.dim || self.nx != spec.nx || self.nt != spec.nt {
            return Err(GridError::InvalidSpec("state does not match spec".into()));
        }
        Ok(())
    }
}

//! Primal-dual hybrid gradient iteration.

use super::cubic::largest_root_monic;
use super::ops::{divergence_into, fold_into, neumann_into};
use super::{GridError, GridSpec, GridState, Mesh, Steps, NONE, RHO_FLOOR};

/// Counters from one or more primal updates.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PrimalStats {
    /// Cells whose cubic root fell below the floor.
    pub clamped: usize,
    /// Largest `|p(root)| / max(1, |coeffs|)` over the solved cubics.
    pub max_cubic_residual: f64,
}

impl PrimalStats {
    fn merge(&mut self, o: PrimalStats) {
        self.clamped += o.clamped;
        self.max_cubic_residual = self.max_cubic_residual.max(o.max_cubic_residual);
    }
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub state: GridState,
    pub objective: f64,
    /// Max-norm Fokker-Planck residual after every iteration.
    pub residuals: Vec<f64>,
    /// `(iteration, objective)` every `objective_every` iterations.
    pub objectives: Vec<(usize, f64)>,
    pub iterations: usize,
    pub converged: bool,
    pub steps: Steps,
    pub stats: PrimalStats,
}

/// Cells paired with each flux unknown in the kinetic term: cell `j` owns the
/// faces on its high side along every axis.
fn kinetic_cell(spec: &GridSpec, state: &GridState, t: usize, j: usize, mesh: &Mesh) -> f64 {
    let nf = mesh.nf;
    let m = state.m_slice(t);
    let m2: f64 = (0..spec.dim)
        .map(|a| m[a * nf + mesh.right_face[a][j]].powi(2))
        .sum();
    let rho = state.rho_slice(t)[j];
    if rho <= RHO_FLOOR {
        if m2.sqrt() < 1e-12 {
            0.0
        } else {
            m2 / (2.0 * RHO_FLOOR)
        }
    } else {
        m2 / (2.0 * rho)
    }
}

/// `dt * h^d * sum_t sum_j |m|^2 / (2 rho)`.
pub fn objective(spec: &GridSpec, state: &GridState) -> f64 {
    let mesh = Mesh::from_spec(spec);
    let mut acc = 0.0;
    for t in 0..spec.nt {
        for j in 0..mesh.nc {
            acc += kinetic_cell(spec, state, t, j, &mesh);
        }
    }
    acc * spec.dt() * spec.h().powi(spec.dim as i32)
}

fn residual_into(spec: &GridSpec, mesh: &Mesh, state: &GridState, out: &mut [f64]) {
    let nc = mesh.nc;
    let h = spec.h();
    let dt = spec.dt();
    let s2 = spec.sigma * spec.sigma;
    let mut diff = vec![0.0; nc];
    for t in 0..spec.nt {
        let r = &mut out[t * nc..(t + 1) * nc];
        let rho_t = state.rho_slice(t);
        let rho_n = state.rho_slice(t + 1);
        let m = state.m_slice(t);
        divergence_into(mesh, m, h, r);
        neumann_into(mesh, rho_t, s2 / (h * h), &mut diff);
        fold_into(mesh, m, h, &mut diff);
        for j in 0..nc {
            r[j] += (rho_n[j] - rho_t[j]) / dt - diff[j];
        }
    }
}

/// Discrete Fokker-Planck residual, `nt * cells` values.
pub fn fp_residual(spec: &GridSpec, state: &GridState) -> Result<Vec<f64>, GridError> {
    state.check(spec)?;
    let mesh = Mesh::from_spec(spec);
    let mut out = vec![0.0; spec.nt * mesh.nc];
    residual_into(spec, &mesh, state, &mut out);
    Ok(out)
}

/// Proximal step on slice `t`: `rho_t` (for `t >= 1`) and the fluxes paired
/// with each cell, one cubic per cell. Uses `phi_{t-1}` and `phi_t`.
pub fn pdhg_update_primal(
    spec: &GridSpec,
    state: &mut GridState,
    t: usize,
    steps: &Steps,
) -> Result<PrimalStats, GridError> {
    state.check(spec)?;
    if t >= spec.nt {
        return Err(GridError::InvalidSpec(format!("slice {t} out of range")));
    }
    let mesh = Mesh::from_spec(spec);
    let mut lap = vec![0.0; mesh.nc];
    Ok(primal_slice(spec, &mesh, state, t, steps, &mut lap))
}

fn primal_slice(
    spec: &GridSpec,
    mesh: &Mesh,
    state: &mut GridState,
    t: usize,
    steps: &Steps,
    lap: &mut [f64],
) -> PrimalStats {
    let nc = mesh.nc;
    let nf = mesh.nf;
    let d = spec.dim;
    let h = spec.h();
    let dt = spec.dt();
    let s2 = spec.sigma * spec.sigma;
    let (mu_r, mu_m) = (steps.mu_rho, steps.mu_m);
    let mut stats = PrimalStats::default();

    let phi_t = &state.phi[t * nc..(t + 1) * nc];
    neumann_into(mesh, phi_t, s2 / (h * h), lap);
    let mut c = [0.0; 2];
    let m_base = t * d * nf;
    for j in 0..nc {
        let mut c2 = 0.0;
        for a in 0..d {
            let n = mesh.next[a][j];
            let g = if n != NONE {
                (phi_t[n] - phi_t[j]) / h
            } else {
                0.0
            };
            c[a] = state.m[m_base + a * nf + mesh.right_face[a][j]] + mu_m * g;
            c2 += c[a] * c[a];
        }
        let rho = if t == 0 {
            state.rho[j]
        } else {
            let phi_prev = state.phi[(t - 1) * nc + j];
            let big_a = (phi_prev - phi_t[j]) / dt - lap[j];
            let b = mu_r * big_a - state.rho[t * nc + j];
            let a2 = b + 2.0 * mu_m;
            let a1 = mu_m * mu_m + 2.0 * b * mu_m;
            let a0 = b * mu_m * mu_m - 0.5 * mu_r * c2;
            let x = largest_root_monic(a2, a1, a0);
            let res = ((x + a2) * x + a1) * x + a0;
            let scale = 1f64.max(a2.abs()).max(a1.abs()).max(a0.abs());
            stats.max_cubic_residual = stats.max_cubic_residual.max(res.abs() / scale);
            let x = if x < RHO_FLOOR {
                stats.clamped += 1;
                RHO_FLOOR
            } else {
                x
            };
            state.rho[t * nc + j] = x;
            x
        };
        let shrink = rho / (rho + mu_m);
        for a in 0..d {
            state.m[m_base + a * nf + mesh.right_face[a][j]] = shrink * c[a];
        }
    }
    stats
}

/// Dual ascent on slice `t`: `phi_t += tau * r_t`, where `r_t` is the
/// residual at the extrapolated primal point.
pub fn pdhg_update_dual(
    state: &mut GridState,
    t: usize,
    tau: f64,
    r_t: &[f64],
) -> Result<(), GridError> {
    let nc = state.cells();
    if r_t.len() != nc {
        return Err(GridError::ShapeMismatch {
            expected: nc,
            got: r_t.len(),
        });
    }
    if t >= state.nt {
        return Err(GridError::InvalidSpec(format!("slice {t} out of range")));
    }
    for (p, r) in state.phi[t * nc..(t + 1) * nc].iter_mut().zip(r_t) {
        *p += tau * r;
    }
    Ok(())
}

const OBJECTIVE_EVERY: usize = 100;
const BEST_EVERY: usize = 50;

/// Iterate primal update, extrapolation and dual ascent until the max-norm
/// residual drops below `spec.tol` or `spec.max_iter` is reached. On
/// non-convergence the iterate with the smallest residual seen at a
/// checkpoint is returned with `converged = false`.
pub fn solve(rho0: &[f64], rho1: &[f64], spec: &GridSpec) -> Result<SolveReport, GridError> {
    let mut state = GridState::init(spec, rho0, rho1)?;
    let mesh = Mesh::from_spec(spec);
    let steps = spec.resolved_steps();
    let nc = mesh.nc;
    let nt = spec.nt;

    let mut lap = vec![0.0; nc];
    let mut r_old = vec![0.0; nt * nc];
    let mut r_new = vec![0.0; nt * nc];
    residual_into(spec, &mesh, &state, &mut r_old);

    let mut residuals = Vec::new();
    let mut objectives = Vec::new();
    let mut stats = PrimalStats::default();
    let mut best: Option<(f64, GridState)> = None;
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..spec.max_iter {
        for t in 0..nt {
            let s = primal_slice(spec, &mesh, &mut state, t, &steps, &mut lap);
            stats.merge(s);
        }
        // residual is affine, so the residual at the extrapolated point is
        // 2 R(x^{k+1}) - R(x^k)
        residual_into(spec, &mesh, &state, &mut r_new);
        let mut rmax = 0.0f64;
        for (p, (rn, ro)) in state.phi.iter_mut().zip(r_new.iter().zip(&r_old)) {
            *p += steps.tau * (2.0 * rn - ro);
            rmax = rmax.max(rn.abs());
        }
        std::mem::swap(&mut r_old, &mut r_new);
        if !rmax.is_finite() {
            return Err(GridError::NonFinite(format!("residual at iteration {it}")));
        }
        residuals.push(rmax);
        iterations = it + 1;
        if it % OBJECTIVE_EVERY == 0 {
            objectives.push((it, objective(spec, &state)));
        }
        if rmax < spec.tol {
            converged = true;
            break;
        }
        if it % BEST_EVERY == 0 && best.as_ref().is_none_or(|(b, _)| rmax < *b) {
            best = Some((rmax, state.clone()));
        }
    }
    if !converged {
        if let Some((b, s)) = best {
            if b < *residuals.last().unwrap_or(&f64::INFINITY) {
                state = s;
            }
        }
    }
    let obj = objective(spec, &state);
    Ok(SolveReport {
        state,
        objective: obj,
        residuals,
        objectives,
        iterations,
        converged,
        steps,
        stats,
    })
}

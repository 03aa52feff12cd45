use super::field::{sample_probes, FieldWorkspace, FlowField, PointEval};
use super::{FlowError, TimeGrid, TrajectoryBatch};
use crate::nn::{DivergenceMode, ParamVector};
use crate::train::Potential;

/// One classical RK4 step of `x' = field(t, x)`.
pub fn rk4_step<F>(mut field: F, state: &[f64], t: f64, dt: f64) -> Result<Vec<f64>, FlowError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(FlowError::InvalidStep(dt));
    }
    if state.iter().any(|v| !v.is_finite()) {
        return Err(FlowError::NonFinite { sample: 0, step: 0 });
    }
    let n = state.len();
    let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut y = vec![0.0; n];
    field(t, state, &mut k[0]);
    for (i, (w, c)) in [(0.5, 0usize), (0.5, 1), (1.0, 2)].into_iter().enumerate() {
        for j in 0..n {
            y[j] = state[j] + w * dt * k[c][j];
        }
        let (_, tail) = k.split_at_mut(i + 1);
        field(t + w * dt, &y, &mut tail[0]);
    }
    let out: Vec<f64> = (0..n)
        .map(|j| state[j] + dt / 6.0 * (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j]))
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(FlowError::NonFinite { sample: 0, step: 0 });
    }
    Ok(out)
}

/// Everything computed along one trajectory. Training reads it back in the
/// reverse pass.
#[derive(Clone, Debug, Default)]
pub struct SampleRecord {
    pub dim: usize,
    pub steps: usize,
    /// Node positions, `(steps + 1) x d`.
    pub z: Vec<f64>,
    pub ell: Vec<f64>,
    /// RK4 stage points `y2, y3, y4` of every forward step, `steps x 3 x d`.
    pub stages: Vec<f64>,
    /// Second-order evaluations at the nodes; empty unless requested.
    pub nodes: Vec<PointEval>,
    /// Hermite midpoints, `zmid[k]` between nodes `k` and `k + 1`.
    pub zmid: Vec<f64>,
    pub mids: Vec<PointEval>,
    /// Score at the nodes, `(steps + 1) x d`.
    pub s: Vec<f64>,
}

impl SampleRecord {
    fn reset(&mut self, d: usize, n: usize) {
        self.dim = d;
        self.steps = n;
        self.z.resize((n + 1) * d, 0.0);
        self.ell.resize(n + 1, 0.0);
        self.stages.resize(3 * n * d, 0.0);
    }

    pub fn z_at(&self, k: usize) -> &[f64] {
        &self.z[k * self.dim..(k + 1) * self.dim]
    }

    pub fn s_at(&self, k: usize) -> &[f64] {
        &self.s[k * self.dim..(k + 1) * self.dim]
    }

    pub fn stage(&self, k: usize, j: usize) -> &[f64] {
        let d = self.dim;
        &self.stages[(3 * k + j) * d..(3 * k + j + 1) * d]
    }
}

fn ensure_evals(v: &mut Vec<PointEval>, n: usize, d: usize) {
    if v.len() != n || v.first().is_some_and(|e| e.f.len() != d) {
        *v = vec![PointEval::zeros(d); n];
    }
}

/// Forward RK4 for `(z, l)` from `x0`. With `with_nodes` the node Jacobians
/// and divergence gradients are also stored; in exact mode they supply the
/// first RK4 stage. Returns the failing step on a non-finite state.
pub fn forward_sample(
    field: &FlowField<'_>,
    x0: &[f64],
    probes: Option<&[f64]>,
    with_nodes: bool,
    ws: &mut FieldWorkspace,
    rec: &mut SampleRecord,
) -> Result<(), usize> {
    let d = field.dim();
    let grid = field.grid();
    let n = grid.steps;
    let h = grid.dt();
    rec.reset(d, n);
    if with_nodes {
        ensure_evals(&mut rec.nodes, n + 1, d);
    }
    rec.z[..d].copy_from_slice(x0);
    rec.ell[0] = 0.0;
    let mut ks = [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    let mut y = vec![0.0; d];
    let mut divs = [0.0; 4];
    for k in 0..n {
        let (done, rest) = rec.z.split_at_mut((k + 1) * d);
        let zk = &done[k * d..];
        if with_nodes {
            field.second(zk, 2 * k, ws, &mut rec.nodes[k]);
        }
        if with_nodes && probes.is_none() {
            ks[0].copy_from_slice(&rec.nodes[k].big_f);
            divs[0] = rec.nodes[k].div;
        } else {
            divs[0] = field.value_div(zk, 2 * k, probes, ws, &mut ks[0]);
        }
        for (j, (w, half)) in [(0.5, 2 * k + 1), (0.5, 2 * k + 1), (1.0, 2 * k + 2)]
            .into_iter()
            .enumerate()
        {
            for i in 0..d {
                y[i] = zk[i] + w * h * ks[j][i];
            }
            rec.stages[(3 * k + j) * d..(3 * k + j + 1) * d].copy_from_slice(&y);
            let (_, tail) = ks.split_at_mut(j + 1);
            divs[j + 1] = field.value_div(&y, half, probes, ws, &mut tail[0]);
        }
        let znext = &mut rest[..d];
        for i in 0..d {
            znext[i] = zk[i] + h / 6.0 * (ks[0][i] + 2.0 * ks[1][i] + 2.0 * ks[2][i] + ks[3][i]);
        }
        rec.ell[k + 1] = rec.ell[k] + h / 6.0 * (divs[0] + 2.0 * divs[1] + 2.0 * divs[2] + divs[3]);
        if znext.iter().any(|v| !v.is_finite()) || !rec.ell[k + 1].is_finite() {
            return Err(k);
        }
    }
    if with_nodes {
        let zn = rec.z[n * d..].to_vec();
        field.second(&zn, 2 * n, ws, &mut rec.nodes[n]);
    }
    Ok(())
}

/// Second-order evaluations at every stored node of `rec`.
pub fn fill_nodes(field: &FlowField<'_>, rec: &mut SampleRecord, ws: &mut FieldWorkspace) {
    let d = rec.dim;
    ensure_evals(&mut rec.nodes, rec.steps + 1, d);
    for k in 0..=rec.steps {
        field.second(&rec.z[k * d..(k + 1) * d], 2 * k, ws, &mut rec.nodes[k]);
    }
}

/// `-g - J^T s`.
fn score_rhs(e: &PointEval, s: &[f64], out: &mut [f64]) {
    let d = s.len();
    for a in 0..d {
        let mut acc = e.gdiv[a];
        for i in 0..d {
            acc += e.jac[i * d + a] * s[i];
        }
        out[a] = -acc;
    }
}

/// Backward RK4 for the score on a record whose nodes are filled. Returns
/// the failing step on a non-finite state.
pub fn score_sample(
    field: &FlowField<'_>,
    rec: &mut SampleRecord,
    terminal_score: &dyn Fn(&[f64], &mut [f64]),
    ws: &mut FieldWorkspace,
) -> Result<(), usize> {
    let d = rec.dim;
    let n = rec.steps;
    let h = field.grid().dt();
    rec.zmid.resize(n * d, 0.0);
    ensure_evals(&mut rec.mids, n, d);
    for k in 0..n {
        for i in 0..d {
            rec.zmid[k * d + i] = 0.5 * (rec.z[k * d + i] + rec.z[(k + 1) * d + i])
                + h / 8.0 * (rec.nodes[k].big_f[i] - rec.nodes[k + 1].big_f[i]);
        }
        field.second(
            &rec.zmid[k * d..(k + 1) * d],
            2 * k + 1,
            ws,
            &mut rec.mids[k],
        );
    }
    rec.s.resize((n + 1) * d, 0.0);
    terminal_score(&rec.z[n * d..], &mut rec.s[n * d..]);
    let mut q = [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    let mut y = vec![0.0; d];
    for k in (1..=n).rev() {
        let (lo, hi) = rec.s.split_at_mut(k * d);
        let sk = &hi[..d];
        let mid = &rec.mids[k - 1];
        score_rhs(&rec.nodes[k], sk, &mut q[0]);
        for i in 0..d {
            y[i] = sk[i] - 0.5 * h * q[0][i];
        }
        score_rhs(mid, &y, &mut q[1]);
        for i in 0..d {
            y[i] = sk[i] - 0.5 * h * q[1][i];
        }
        score_rhs(mid, &y, &mut q[2]);
        for i in 0..d {
            y[i] = sk[i] - h * q[2][i];
        }
        score_rhs(&rec.nodes[k - 1], &y, &mut q[3]);
        let sprev = &mut lo[(k - 1) * d..];
        for i in 0..d {
            sprev[i] = sk[i] - h / 6.0 * (q[0][i] + 2.0 * q[1][i] + 2.0 * q[2][i] + q[3][i]);
        }
        if sprev.iter().any(|v| !v.is_finite()) {
            return Err(k - 1);
        }
    }
    Ok(())
}

fn check_points(x: &[f64], d: usize) -> Result<usize, FlowError> {
    if d == 0 || x.len() % d != 0 {
        return Err(FlowError::DimMismatch {
            expected: d,
            got: x.len() % d.max(1),
        });
    }
    Ok(x.len() / d)
}

/// `(z, l)` at every node for each row of `x0` (`batch x d`).
pub fn integrate_forward(
    net: &ParamVector,
    prior: Option<&Potential>,
    x0: &[f64],
    grid: TimeGrid,
    mode: DivergenceMode,
) -> Result<TrajectoryBatch, FlowError> {
    let d = net.dim();
    let batch = check_points(x0, d)?;
    if let Some((b, _)) = x0
        .chunks(d)
        .enumerate()
        .find(|(_, x)| x.iter().any(|v| !v.is_finite()))
    {
        return Err(FlowError::NonFinite { sample: b, step: 0 });
    }
    let field = FlowField::new(net, prior, grid)?;
    let mut ws = field.workspace();
    let mut rec = SampleRecord::default();
    let n = grid.steps;
    let mut z = Vec::with_capacity(batch * (n + 1) * d);
    let mut ell = Vec::with_capacity(batch * (n + 1));
    for (b, x) in x0.chunks(d).enumerate() {
        let probes = match mode {
            DivergenceMode::Exact => None,
            DivergenceMode::Hutchinson(cfg) => Some(sample_probes(&cfg, d, b)),
        };
        forward_sample(&field, x, probes.as_deref(), false, &mut ws, &mut rec)
            .map_err(|step| FlowError::NonFinite { sample: b, step })?;
        z.extend_from_slice(&rec.z);
        ell.extend_from_slice(&rec.ell);
    }
    Ok(TrajectoryBatch {
        dim: d,
        grid,
        batch,
        z,
        ell,
        s: None,
    })
}

/// Fill `s` by integrating the score equation backward from
/// `s(T) = terminal_score(z(T))`.
pub fn integrate_score_backward(
    net: &ParamVector,
    prior: Option<&Potential>,
    traj: &TrajectoryBatch,
    terminal_score: &dyn Fn(&[f64], &mut [f64]),
) -> Result<TrajectoryBatch, FlowError> {
    let d = net.dim();
    if traj.dim != d {
        return Err(FlowError::DimMismatch {
            expected: d,
            got: traj.dim,
        });
    }
    let n = traj.grid.steps;
    if traj.z.len() != traj.batch * (n + 1) * d {
        return Err(FlowError::GridMismatch);
    }
    let field = FlowField::new(net, prior, traj.grid)?;
    let mut ws = field.workspace();
    let mut rec = SampleRecord {
        dim: d,
        steps: n,
        ..Default::default()
    };
    let mut s = Vec::with_capacity(traj.z.len());
    for b in 0..traj.batch {
        rec.z.clear();
        rec.z
            .extend_from_slice(&traj.z[b * (n + 1) * d..(b + 1) * (n + 1) * d]);
        fill_nodes(&field, &mut rec, &mut ws);
        score_sample(&field, &mut rec, terminal_score, &mut ws)
            .map_err(|step| FlowError::NonFinite { sample: b, step })?;
        s.extend_from_slice(&rec.s);
    }
    let mut out = traj.clone();
    out.s = Some(s);
    Ok(out)
}

/// Backward RK4 for `dz/dt = F(z, t)` from `z1` at `T` to 0. Node `k` of the
/// path is written to `nodes[k * d..(k + 1) * d]`. Returns the failing step
/// on a non-finite state.
pub fn generative_path(
    field: &FlowField<'_>,
    z1: &[f64],
    ws: &mut FieldWorkspace,
    nodes: &mut Vec<f64>,
) -> Result<(), usize> {
    let d = field.dim();
    let grid = field.grid();
    let h = grid.dt();
    let n = grid.steps;
    nodes.clear();
    nodes.resize((n + 1) * d, 0.0);
    nodes[n * d..].copy_from_slice(z1);
    if z1.iter().any(|v| !v.is_finite()) {
        return Err(n);
    }
    let mut z = z1.to_vec();
    let mut ks = [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    let mut y = vec![0.0; d];
    for k in (1..=n).rev() {
        field.value(&z, 2 * k, ws, &mut ks[0]);
        for (j, (w, half)) in [(0.5, 2 * k - 1), (0.5, 2 * k - 1), (1.0, 2 * k - 2)]
            .into_iter()
            .enumerate()
        {
            for i in 0..d {
                y[i] = z[i] - w * h * ks[j][i];
            }
            let (_, tail) = ks.split_at_mut(j + 1);
            field.value(&y, half, ws, &mut tail[0]);
        }
        for i in 0..d {
            z[i] -= h / 6.0 * (ks[0][i] + 2.0 * ks[1][i] + 2.0 * ks[2][i] + ks[3][i]);
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(k - 1);
        }
        nodes[(k - 1) * d..k * d].copy_from_slice(&z);
    }
    Ok(())
}

/// Integrate `dz/dt = F(z, t)` from `T` back to 0 for each row of `z1`.
pub fn sample_generative(
    net: &ParamVector,
    prior: Option<&Potential>,
    z1: &[f64],
    grid: TimeGrid,
) -> Result<Vec<f64>, FlowError> {
    let d = net.dim();
    check_points(z1, d)?;
    let field = FlowField::new(net, prior, grid)?;
    let mut ws = field.workspace();
    let mut nodes = Vec::new();
    let mut out = Vec::with_capacity(z1.len());
    for (b, z) in z1.chunks(d).enumerate() {
        generative_path(&field, z, &mut ws, &mut nodes)
            .map_err(|step| FlowError::NonFinite { sample: b, step })?;
        out.extend_from_slice(&nodes[..d]);
    }
    Ok(out)
}

//! Per-sample loss and its exact gradient through the discrete integrators.
//!
//! The reverse pass differentiates exactly what the forward pass computes:
//! the forward RK4 for `(z, l)`, the Hermite midpoints, the backward RK4 for
//! `s`, the terminal score and the trapezoidal rule for the transport term.
//! Every network evaluation is replayed as a jet and pulled back with
//! [`ParamVector::jet_backward`].

use crate::density::LogDensity;
use crate::flow::{
    forward_sample, score_sample, FieldWorkspace, FlowField, PointEval, SampleRecord,
};
use crate::nn::{JetShape, TimeCotangent};

/// Loss weights shared by every sample in a batch.
#[derive(Clone, Copy, Debug)]
pub(crate) struct LossWeights {
    pub alpha: f64,
    pub sigma2: f64,
}

/// `C` and `B` for one sample, with the gradient of `alpha C + B` when asked.
#[derive(Clone, Debug, Default)]
pub(crate) struct SampleOut {
    pub c: f64,
    pub b: f64,
    pub grad: Vec<f64>,
    pub tcot: Vec<TimeCotangent>,
}

/// Failure in the forward or score pass, with the offending step.
#[derive(Clone, Copy, Debug)]
pub(crate) struct StepFailure(pub usize);

#[derive(Default)]
pub(crate) struct SampleWorkspace {
    pub field: FieldWorkspace,
    pub rec: SampleRecord,
    bar: Vec<f64>,
    zbar: Vec<f64>,
    fbar_net: Vec<f64>,
    fbar: Vec<f64>,
    jbar: Vec<f64>,
    gbar: Vec<f64>,
    divbar: Vec<f64>,
    jbar_mid: Vec<f64>,
    gbar_mid: Vec<f64>,
    sbar: Vec<f64>,
}

impl SampleWorkspace {
    pub fn new(d: usize) -> Self {
        Self {
            field: FieldWorkspace::new(d),
            ..Default::default()
        }
    }
}

fn zeroed(v: &mut Vec<f64>, n: usize) {
    v.clear();
    v.resize(n, 0.0);
}

/// Cotangents on the quantities a second-order node evaluation produces.
struct NodeBar<'a> {
    /// On the network output only (the transport term).
    f_net: &'a [f64],
    /// On `F = f - grad U`.
    big_f: &'a [f64],
    jac: &'a [f64],
    gdiv: &'a [f64],
    div: f64,
}

/// Pull a first-order evaluation `(F, div F)` at `y` back to `y`.
#[allow(clippy::too_many_arguments)]
fn stage_vjp(
    field: &FlowField<'_>,
    y: &[f64],
    half: usize,
    probes: Option<&[f64]>,
    kbar: &[f64],
    dbar: f64,
    ws: &mut FieldWorkspace,
    bar: &mut Vec<f64>,
    grad: &mut [f64],
    tcot: &mut [TimeCotangent],
) -> Vec<f64> {
    let d = y.len();
    let net = field.net();
    let (dirs, k) = match probes {
        Some(p) => (p.to_vec(), p.len() / d),
        None => (ws.unit.clone(), d),
    };
    let shape = JetShape::first(k);
    let nc = shape.ncomp();
    let tf = field.features(half);
    net.jet_forward(tf, y, &dirs, shape, &mut ws.jet);
    zeroed(bar, d * nc);
    for i in 0..d {
        bar[i * nc] = kbar[i];
        match probes {
            None => bar[i * nc + 1 + i] += dbar,
            Some(p) => {
                for a in 0..k {
                    bar[i * nc + 1 + a] += dbar * p[a * d + i] / k as f64;
                }
            }
        }
    }
    let mut ybar = net.jet_backward(tf, &mut ws.jet, bar, grad, &mut tcot[half]);
    if let Some(u) = field.prior() {
        let pd = u.derivs(y);
        let gl = pd.grad_laplacian();
        for c in 0..d {
            let mut acc = gl[c] * dbar;
            for i in 0..d {
                acc += pd.hess[i * d + c] * kbar[i];
            }
            ybar[c] -= acc;
        }
    }
    ybar
}

/// Pull a second-order evaluation at `z` back to `z`. With `probes` the
/// divergence cotangent goes through a separate probe jet, as in the
/// forward pass.
#[allow(clippy::too_many_arguments)]
fn node_vjp(
    field: &FlowField<'_>,
    z: &[f64],
    half: usize,
    probes: Option<&[f64]>,
    nb: &NodeBar<'_>,
    ws: &mut FieldWorkspace,
    bar: &mut Vec<f64>,
    grad: &mut [f64],
    tcot: &mut [TimeCotangent],
) -> Vec<f64> {
    let d = z.len();
    let net = field.net();
    let shape = JetShape::second(d);
    let nc = shape.ncomp();
    let tf = field.features(half);
    let unit = ws.unit.clone();
    net.jet_forward(tf, z, &unit, shape, &mut ws.jet);
    zeroed(bar, d * nc);
    for i in 0..d {
        bar[i * nc] = nb.f_net[i] + nb.big_f[i];
        for a in 0..d {
            bar[i * nc + 1 + a] += nb.jac[i * d + a];
            bar[i * nc + shape.pair_index(a, i)] += nb.gdiv[a];
        }
        if probes.is_none() {
            bar[i * nc + 1 + i] += nb.div;
        }
    }
    let mut zbar = net.jet_backward(tf, &mut ws.jet, bar, grad, &mut tcot[half]);
    if let Some(p) = probes {
        let zero = vec![0.0; d];
        let extra = stage_vjp(field, z, half, Some(p), &zero, nb.div, ws, bar, grad, tcot);
        // stage_vjp already applied the prior Laplacian term for `div`.
        zbar.iter_mut().zip(extra).for_each(|(a, b)| *a += b);
    }
    if let Some(u) = field.prior() {
        let pd = u.derivs(z);
        let gl = pd.grad_laplacian();
        let hl = pd.hess_laplacian();
        for c in 0..d {
            let mut acc = 0.0;
            for i in 0..d {
                acc += pd.hess[i * d + c] * nb.big_f[i];
                acc += hl[c * d + i] * nb.gdiv[i];
                for a in 0..d {
                    acc += nb.jac[i * d + a] * pd.third[(i * d + a) * d + c];
                }
            }
            if probes.is_none() {
                acc += gl[c] * nb.div;
            }
            zbar[c] -= acc;
        }
    }
    zbar
}

/// `J^T s` contribution of `q = -g - J^T s_in` with cotangent `qbar`:
/// accumulates `gbar`, `jbar` and returns `s_in`'s cotangent.
fn rhs_vjp(
    e: &PointEval,
    s_in: &[f64],
    qbar: &[f64],
    jbar: &mut [f64],
    gbar: &mut [f64],
    sbar_in: &mut [f64],
) {
    let d = s_in.len();
    for a in 0..d {
        gbar[a] -= qbar[a];
    }
    for i in 0..d {
        let mut acc = 0.0;
        for a in 0..d {
            jbar[i * d + a] -= s_in[i] * qbar[a];
            acc += e.jac[i * d + a] * qbar[a];
        }
        sbar_in[i] -= acc;
    }
}

fn rhs(e: &PointEval, s: &[f64], out: &mut [f64]) {
    let d = s.len();
    for a in 0..d {
        let mut acc = e.gdiv[a];
        for i in 0..d {
            acc += e.jac[i * d + a] * s[i];
        }
        out[a] = -acc;
    }
}

/// Forward pass, loss and (optionally) gradient for one initial point.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sample_loss(
    field: &FlowField<'_>,
    x: &[f64],
    probes: Option<&[f64]>,
    weights: LossWeights,
    terminal: &dyn LogDensity,
    want_grad: bool,
    ws: &mut SampleWorkspace,
) -> Result<SampleOut, StepFailure> {
    let d = field.dim();
    let grid = field.grid();
    let n = grid.steps;
    let h = grid.dt();
    forward_sample(field, x, probes, true, &mut ws.field, &mut ws.rec).map_err(StepFailure)?;
    let term = |z: &[f64], s: &mut [f64]| terminal.score(z, s);
    score_sample(field, &mut ws.rec, &term, &mut ws.field).map_err(StepFailure)?;
    let rec = &ws.rec;
    let zn = rec.z_at(n);
    let c = -rec.ell[n] - terminal.log_density(zn);
    let mut b = 0.0;
    let trap = |k: usize| if k == 0 || k == n { 0.5 } else { 1.0 };
    for k in 0..=n {
        let f = &rec.nodes[k].f;
        let s = rec.s_at(k);
        let r2: f64 = (0..d).map(|i| (f[i] + weights.sigma2 * s[i]).powi(2)).sum();
        b += h * trap(k) * 0.5 * r2;
    }
    if !c.is_finite() || !b.is_finite() {
        return Err(StepFailure(n));
    }
    let mut out = SampleOut {
        c,
        b,
        ..Default::default()
    };
    if !want_grad {
        return Ok(out);
    }

    let np = field.net().len();
    out.grad = vec![0.0; np];
    out.tcot = (0..=2 * n)
        .map(|i| TimeCotangent::zeros_like(field.features(i)))
        .collect();
    let alpha = weights.alpha;
    let s2 = weights.sigma2;
    let dd = d * d;
    zeroed(&mut ws.zbar, (n + 1) * d);
    zeroed(&mut ws.fbar_net, (n + 1) * d);
    zeroed(&mut ws.fbar, (n + 1) * d);
    zeroed(&mut ws.jbar, (n + 1) * dd);
    zeroed(&mut ws.gbar, (n + 1) * d);
    zeroed(&mut ws.divbar, n + 1);
    zeroed(&mut ws.jbar_mid, n * dd);
    zeroed(&mut ws.gbar_mid, n * d);
    zeroed(&mut ws.sbar, (n + 1) * d);
    let rec = &ws.rec;

    // transport term
    for k in 0..=n {
        let f = &rec.nodes[k].f;
        let s = rec.s_at(k);
        for i in 0..d {
            let r = f[i] + s2 * s[i];
            ws.fbar_net[k * d + i] += h * trap(k) * r;
            ws.sbar[k * d + i] += h * trap(k) * s2 * r;
        }
    }

    // backward score RK4, reversed in increasing k
    let mut y = vec![0.0; d];
    let mut q = [vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    let mut qbar = [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    let mut tmp = vec![0.0; d];
    for k in 1..=n {
        let sk = rec.s_at(k).to_vec();
        let node_k = &rec.nodes[k];
        let node_p = &rec.nodes[k - 1];
        let mid = &rec.mids[k - 1];
        // recompute q1..q3 and the stage inputs
        rhs(node_k, &sk, &mut q[0]);
        let sb: Vec<f64> = (0..d).map(|i| sk[i] - 0.5 * h * q[0][i]).collect();
        rhs(mid, &sb, &mut q[1]);
        let sc: Vec<f64> = (0..d).map(|i| sk[i] - 0.5 * h * q[1][i]).collect();
        rhs(mid, &sc, &mut q[2]);
        let sd: Vec<f64> = (0..d).map(|i| sk[i] - h * q[2][i]).collect();
        let obar: Vec<f64> = ws.sbar[(k - 1) * d..k * d].to_vec();
        for i in 0..d {
            ws.sbar[k * d + i] += obar[i];
            qbar[0][i] = -h / 6.0 * obar[i];
            qbar[1][i] = -h / 3.0 * obar[i];
            qbar[2][i] = -h / 3.0 * obar[i];
            qbar[3][i] = -h / 6.0 * obar[i];
        }
        // stage 4 at node k-1
        tmp.fill(0.0);
        rhs_vjp(
            node_p,
            &sd,
            &qbar[3],
            &mut ws.jbar[(k - 1) * dd..k * dd],
            &mut ws.gbar[(k - 1) * d..k * d],
            &mut tmp,
        );
        for i in 0..d {
            ws.sbar[k * d + i] += tmp[i];
            qbar[2][i] -= h * tmp[i];
        }
        // stage 3 at the midpoint
        tmp.fill(0.0);
        rhs_vjp(
            mid,
            &sc,
            &qbar[2],
            &mut ws.jbar_mid[(k - 1) * dd..k * dd],
            &mut ws.gbar_mid[(k - 1) * d..k * d],
            &mut tmp,
        );
        for i in 0..d {
            ws.sbar[k * d + i] += tmp[i];
            qbar[1][i] -= 0.5 * h * tmp[i];
        }
        // stage 2 at the midpoint
        tmp.fill(0.0);
        rhs_vjp(
            mid,
            &sb,
            &qbar[1],
            &mut ws.jbar_mid[(k - 1) * dd..k * dd],
            &mut ws.gbar_mid[(k - 1) * d..k * d],
            &mut tmp,
        );
        for i in 0..d {
            ws.sbar[k * d + i] += tmp[i];
            qbar[0][i] -= 0.5 * h * tmp[i];
        }
        // stage 1 at node k
        tmp.fill(0.0);
        rhs_vjp(
            node_k,
            &sk,
            &qbar[0],
            &mut ws.jbar[k * dd..(k + 1) * dd],
            &mut ws.gbar[k * d..(k + 1) * d],
            &mut tmp,
        );
        for i in 0..d {
            ws.sbar[k * d + i] += tmp[i];
        }
    }

    // terminal score and the KL term
    let mut hess = vec![0.0; dd];
    terminal.score_jacobian(zn, &mut hess);
    let mut g1 = vec![0.0; d];
    terminal.score(zn, &mut g1);
    for a in 0..d {
        let mut acc = -alpha * g1[a];
        for i in 0..d {
            acc += hess[a * d + i] * ws.sbar[n * d + i];
        }
        ws.zbar[n * d + a] += acc;
    }

    // Hermite midpoints
    let mut bar = std::mem::take(&mut ws.bar);
    let zero_d = vec![0.0; d];
    for k in 0..n {
        let zm = &rec.zmid[k * d..(k + 1) * d];
        let nb = NodeBar {
            f_net: &zero_d,
            big_f: &zero_d,
            jac: &ws.jbar_mid[k * dd..(k + 1) * dd],
            gdiv: &ws.gbar_mid[k * d..(k + 1) * d],
            div: 0.0,
        };
        let zmb = node_vjp(
            field,
            zm,
            2 * k + 1,
            None,
            &nb,
            &mut ws.field,
            &mut bar,
            &mut out.grad,
            &mut out.tcot,
        );
        for i in 0..d {
            ws.zbar[k * d + i] += 0.5 * zmb[i];
            ws.zbar[(k + 1) * d + i] += 0.5 * zmb[i];
            ws.fbar[k * d + i] += h / 8.0 * zmb[i];
            ws.fbar[(k + 1) * d + i] -= h / 8.0 * zmb[i];
        }
    }

    let cw = [1.0, 2.0, 2.0, 1.0];
    let node_pass = |k: usize,
                     kbar1: &[f64],
                     ws: &mut SampleWorkspace,
                     bar: &mut Vec<f64>,
                     out: &mut SampleOut| {
        let fb: Vec<f64> = (0..d).map(|i| ws.fbar[k * d + i] + kbar1[i]).collect();
        let nb = NodeBar {
            f_net: &ws.fbar_net[k * d..(k + 1) * d],
            big_f: &fb,
            jac: &ws.jbar[k * dd..(k + 1) * dd],
            gdiv: &ws.gbar[k * d..(k + 1) * d],
            div: ws.divbar[k],
        };
        let zk = ws.rec.z_at(k).to_vec();
        let zb = node_vjp(
            field,
            &zk,
            2 * k,
            probes,
            &nb,
            &mut ws.field,
            bar,
            &mut out.grad,
            &mut out.tcot,
        );
        for i in 0..d {
            ws.zbar[k * d + i] += zb[i];
        }
    };
    node_pass(n, &zero_d, ws, &mut bar, &mut out);

    // forward RK4 in reverse
    let mut kbar = [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    for k in (0..n).rev() {
        let znext_bar = ws.zbar[(k + 1) * d..(k + 2) * d].to_vec();
        for j in 0..4 {
            for i in 0..d {
                kbar[j][i] = h / 6.0 * cw[j] * znext_bar[i];
            }
        }
        let dbar = |j: usize| -alpha * h / 6.0 * cw[j];
        for i in 0..d {
            ws.zbar[k * d + i] += znext_bar[i];
        }
        for (j, half, w) in [
            (3usize, 2 * k + 2, 1.0),
            (2, 2 * k + 1, 0.5),
            (1, 2 * k + 1, 0.5),
        ] {
            y.copy_from_slice(ws.rec.stage(k, j - 1));
            let kb = kbar[j].clone();
            let yb = stage_vjp(
                field,
                &y,
                half,
                probes,
                &kb,
                dbar(j),
                &mut ws.field,
                &mut bar,
                &mut out.grad,
                &mut out.tcot,
            );
            for i in 0..d {
                ws.zbar[k * d + i] += yb[i];
                kbar[j - 1][i] += w * h * yb[i];
            }
        }
        ws.divbar[k] += dbar(0);
        let kb1 = kbar[0].clone();
        node_pass(k, &kb1, ws, &mut bar, &mut out);
    }
    ws.bar = bar;
    Ok(out)
}

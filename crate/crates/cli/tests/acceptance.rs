//! Acceptance suite: one `criterion N: PASS|FAIL ...` line per criterion.
//!
//! `SBP_ACCEPTANCE=fast` runs the quick numerical checks (2-6, 12) only;
//! the default also runs the reproduction criteria, which take over an
//! hour on one core.

use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sbp_cli::commands::compare::{compare, field_error_vs_grid, NeuralSide, Side};
use sbp_cli::commands::grid::{solve_config, GridArtifact};
use sbp_cli::commands::recover::recover;
use sbp_cli::commands::sample::cmd_sample;
use sbp_cli::commands::sweep::run_sweep;
use sbp_cli::commands::train::{evaluate, fit};
use sbp_cli::commands::FIELD_FILE;
use sbp_cli::config::{Experiment, ExperimentConfig, SweepParam, SweepSpec};
use sbp_core::flow::{
    integrate_forward, integrate_score_backward, sample_generative, FlowField, TimeGrid,
};
use sbp_core::grid::{
    discrete_divergence, discrete_gradient, neumann_laplacian, pdhg_update_primal,
    sample_density, solve, GridSpec, GridState, SolveReport, Steps,
};
use sbp_core::nn::{
    divergence_probe_values, eval_field, DivergenceMode, NetSpec, ParamVector,
};
use sbp_core::train::{
    kl_estimate, loss_and_grad, loss_terms, DataSampler, SamplerKind, TrainConfig,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn err(e: impl std::fmt::Display) -> Verdict {
    verdict(false, format!("error: {e}"))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------- quick --

fn criterion_2() -> Verdict {
    // linear field z' = A z + b: the log-determinant is t tr(A)
    let a = [0.3, -0.7, 0.4, -0.9];
    let net = ParamVector::affine(&a, &[0.1, -0.2]).unwrap();
    let grid = TimeGrid::new(1.0, 100).unwrap();
    let x0 = [0.5, 1.0, -2.0, 0.3, 1.5, -1.5];
    let Ok(tr) = integrate_forward(&net, None, &x0, grid, DivergenceMode::Exact) else {
        return err("forward integration failed");
    };
    let want = a[0] + a[3];
    let ell_err = (0..3)
        .map(|b| (tr.ell_at(b, 100) - want).abs())
        .fold(0.0, f64::max);

    // z' = -z from N(0, 1): rho_t = N(0, e^{-2t}), score -z e^{2t}
    let neg = ParamVector::affine(&[-1.0], &[0.0]).unwrap();
    let x0: Vec<f64> = (0..9).map(|i| -2.0 + 0.5 * i as f64).collect();
    let e2 = 2.0f64.exp();
    let score_err = integrate_forward(&neg, None, &x0, grid, DivergenceMode::Exact)
        .and_then(|tr| integrate_score_backward(&neg, None, &tr, &|z, s| s[0] = -z[0] * e2))
        .map(|tr| {
            let mut worst: f64 = 0.0;
            for b in 0..x0.len() {
                for k in 0..=100 {
                    let want = -tr.z_at(b, k)[0] * (2.0 * grid.node(k)).exp();
                    worst = worst.max((tr.s_at(b, k).unwrap()[0] - want).abs());
                }
            }
            worst
        });
    let Ok(score_err) = score_err else {
        return err("score integration failed");
    };
    verdict(
        ell_err < 1e-6 && score_err < 1e-4,
        format!("|l(T) - T trA| = {ell_err:.2e} (< 1e-6), score error {score_err:.2e} (< 1e-4)"),
    )
}

fn criterion_3() -> Verdict {
    let cfg = TrainConfig {
        steps: 10,
        batch_size: 4,
        net: NetSpec::new(1, 8),
        ..TrainConfig::default()
    };
    let batch = DataSampler::new(SamplerKind::GaussianMixture1d, 1).sample(4);
    let p = ParamVector::init(&cfg.net, 3).unwrap();
    let Ok((_, grad)) = loss_and_grad(&p, &batch, &cfg, None) else {
        return err("gradient failed");
    };
    let j_at = |v: Vec<f64>| {
        let q = ParamVector::from_values(p.layout().clone(), v).unwrap();
        loss_terms(&q, &batch, &cfg, None).unwrap().j
    };
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let k = rng.random_range(0..p.len());
        let mut vp = p.values().to_vec();
        let mut vm = vp.clone();
        vp[k] += eps;
        vm[k] -= eps;
        let fd = (j_at(vp) - j_at(vm)) / (2.0 * eps);
        // floor keeps round-off in near-zero entries from dominating
        let rel = (grad[k] - fd).abs() / fd.abs().max(grad[k].abs()).max(1e-3);
        worst = worst.max(rel);
    }
    verdict(
        worst <= 1e-4,
        format!("worst relative error {worst:.2e} over 20 coordinates (<= 1e-4)"),
    )
}

fn criterion_4() -> Verdict {
    let net = ParamVector::init(&NetSpec::new(2, 16), 7).unwrap();
    let grid = TimeGrid::new(1.0, 10).unwrap();
    let half = 3;
    let t = grid.half(half);
    // central differences of the field itself
    let fd_jac = |z: &[f64]| {
        let h = 1e-5;
        let mut j = [0.0; 4];
        for c in 0..2 {
            let (mut zp, mut zm) = (z.to_vec(), z.to_vec());
            zp[c] += h;
            zm[c] -= h;
            let (fp, fm) = (eval_field(&net, &zp, t).unwrap(), eval_field(&net, &zm, t).unwrap());
            for r in 0..2 {
                j[r * 2 + c] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        j
    };
    // A single Rademacher probe has standard deviation |J12 + J21| in 2D, so
    // a relative bound only means something where the trace dominates it.
    let candidates = DataSampler::new(
        SamplerKind::Gaussian {
            mean: vec![0.0, 0.0],
            var: vec![1.0, 1.0],
        },
        4,
    )
    .sample(64);
    let ratio = |z: &[f64]| {
        let j = fd_jac(z);
        (j[0] + j[3]).abs() / (j[1] + j[2]).abs().max(1e-12)
    };
    let z = candidates
        .chunks(2)
        .max_by(|a, b| ratio(a).total_cmp(&ratio(b)))
        .unwrap()
        .to_vec();
    let j = fd_jac(&z);
    let exact = j[0] + j[3];
    let n = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let probes: Vec<f64> = (0..2 * n)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let vals = divergence_probe_values(&net, &z, t, &probes).unwrap();
    let mean = vals.iter().sum::<f64>() / n as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    // the training path computes the same average
    let field = FlowField::new(&net, None, grid).unwrap();
    let mut ws = field.workspace();
    let mut out = [0.0; 2];
    let via_field = field.value_div(&z, half, Some(&probes), &mut ws, &mut out);
    let rel = (mean - exact).abs() / exact.abs();
    let pass = rel < 0.01 && (mean - exact).abs() <= 3.0 * se && (via_field - mean).abs() < 1e-9;
    verdict(
        pass,
        format!(
            "at z = ({:.3}, {:.3}): estimate {mean:.6} vs exact {exact:.6}, relative error \
             {rel:.2e} (< 1e-2), {:.2} standard errors (<= 3)",
            z[0],
            z[1],
            (mean - exact).abs() / se.max(f64::MIN_POSITIVE)
        ),
    )
}

fn criterion_5() -> Verdict {
    let net = ParamVector::init(&NetSpec::new(2, 16), 5).unwrap();
    let grid = TimeGrid::new(1.0, 100).unwrap();
    let x0 = DataSampler::new(
        SamplerKind::Gaussian {
            mean: vec![0.0, 0.0],
            var: vec![1.0, 1.0],
        },
        9,
    )
    .sample(200);
    let back = integrate_forward(&net, None, &x0, grid, DivergenceMode::Exact)
        .and_then(|tr| sample_generative(&net, None, &tr.terminal(), grid));
    match back {
        Ok(back) => {
            let e = max_abs_diff(&back, &x0);
            verdict(e < 1e-5, format!("round-trip error {e:.2e} over 200 points (< 1e-5)"))
        }
        Err(e) => err(e),
    }
}

fn criterion_6() -> Verdict {
    let net = ParamVector::affine(&[0.0; 4], &[0.0; 2]).unwrap();
    let cfg = TrainConfig {
        steps: 10,
        net: NetSpec::new(2, 16),
        ..TrainConfig::default()
    };
    let mut s = DataSampler::new(
        SamplerKind::Gaussian {
            mean: vec![0.0, 0.0],
            var: vec![1.0, 1.0],
        },
        5,
    );
    match kl_estimate(&net, &mut s, &cfg, None, 100_000) {
        Ok(kl) => verdict(
            kl.mean.abs() <= 3.0 * kl.stderr,
            format!("KL {:.3e} with standard error {:.3e} (n = {})", kl.mean, kl.stderr, kl.n),
        ),
        Err(e) => err(e),
    }
}

fn small_mixture_solve() -> (GridSpec, Vec<f64>, Vec<f64>, SolveReport) {
    let mut spec = GridSpec::new(1, 32, 16, -6.0, 6.0, 1.0);
    spec.step_scale = 0.005;
    spec.tol = 1e-4;
    spec.max_iter = 40_000;
    let g = |x: f64, m: f64| (-(x - m).powi(2) / 2.0).exp();
    let r0 = sample_density(&spec, |x| g(x[0], -3.0) + g(x[0], 3.0));
    let r1 = sample_density(&spec, |x| g(x[0], 0.0));
    let rep = solve(&r0, &r1, &spec).unwrap();
    (spec, r0, r1, rep)
}

/// Worst stationarity violation of the single-cell proximal problem
/// `|m|^2/(2 rho) + (rho - rb)^2/(2 mu_r) + (m - mb)^2/(2 mu_m)`.
fn prox_violation(rng: &mut ChaCha8Rng) -> f64 {
    let spec = GridSpec::new(1, 3, 2, 0.0, 3.0, 0.0);
    let r = vec![1.0 / 3.0; 3];
    let mut st = GridState::init(&spec, &r, &r).unwrap();
    let (rb, mb) = (rng.random_range(1e-3..5.0), rng.random_range(-5.0..5.0));
    let (mr, mm) = (rng.random_range(1e-3..2.0), rng.random_range(1e-3..2.0));
    st.rho[3] = rb;
    st.m[4 + 1] = mb;
    let steps = Steps {
        mu_rho: mr,
        mu_m: mm,
        tau: 1.0,
    };
    pdhg_update_primal(&spec, &mut st, 1, &steps).unwrap();
    let (rho, m) = (st.rho[3], st.m[5]);
    let d_m = (m / rho + (m - mb) / mm) / (1.0 + mb.abs() / mm);
    let d_r = (-m * m / (2.0 * rho * rho) + (rho - rb) / mr) / (1.0 + mb * mb / (rb * rb) + rb / mr);
    d_m.abs().max(d_r.abs())
}

fn criterion_12() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut adj: f64 = 0.0;
    for (dim, nx) in [(1, 17), (2, 9)] {
        let h = 0.37;
        let nc = nx * if dim == 2 { nx } else { 1 };
        let nf = (nx + 1) * if dim == 2 { nx + 1 } else { 1 };
        let phi: Vec<f64> = (0..nc).map(|_| rng.random_range(-1.0..1.0)).collect();
        let psi: Vec<f64> = (0..nc).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = discrete_gradient(dim, nx, &phi, h);
        // fluxes on interior faces, where the gradient lives
        let m: Vec<f64> = (0..dim * nf)
            .map(|i| if g[i] != 0.0 { rng.random_range(-1.0..1.0) } else { 0.0 })
            .collect();
        let vol = h.powi(dim as i32);
        let dot = |a: &[f64], b: &[f64]| vol * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let d = discrete_divergence(dim, nx, &m, h);
        let lhs = dot(&d, &phi);
        let rhs = -dot(&m, &g);
        adj = adj.max((lhs - rhs).abs() / (1.0 + lhs.abs()));
        let lp = neumann_laplacian(dim, nx, &phi, h);
        let lq = neumann_laplacian(dim, nx, &psi, h);
        let (a, b) = (dot(&lp, &psi), dot(&phi, &lq));
        adj = adj.max((a - b).abs() / (1.0 + a.abs()));
    }

    let prox = (0..200).map(|_| prox_violation(&mut rng)).fold(0.0, f64::max);

    let (spec, r0, r1, rep) = small_mixture_solve();
    let endpoints =
        rep.state.rho_slice(0) == &r0[..] && rep.state.rho_slice(spec.nt) == &r1[..];
    let r = &rep.residuals;
    let w = r.len() / 8;
    let maxima: Vec<f64> = if w == 0 {
        Vec::new()
    } else {
        r[r.len() / 2..]
            .chunks(w)
            .filter(|c| c.len() == w)
            .map(|c| c.iter().cloned().fold(0.0, f64::max))
            .collect()
    };
    let monotone = maxima.len() >= 3 && maxima.windows(2).all(|p| p[1] <= p[0]);
    let cubic = rep.stats.max_cubic_residual;
    let pass = adj <= 1e-12 && cubic <= 1e-10 && prox <= 1e-10 && endpoints && monotone;
    verdict(
        pass,
        format!(
            "adjointness {adj:.1e}, solver cubic residual {cubic:.1e}, prox stationarity \
             {prox:.1e}, endpoints unchanged: {endpoints}, trailing window maxima \
             nonincreasing: {monotone} ({} windows)",
            maxima.len()
        ),
    )
}

// --------------------------------------------------------- reproduction --

struct Shared {
    grid: Option<GridArtifact>,
    field: Option<ParamVector>,
}

fn artifact(spec: GridSpec, rep: SolveReport) -> GridArtifact {
    GridArtifact {
        spec,
        objective: rep.objective,
        state: rep.state,
    }
}

fn criterion_1(shared: &mut Shared) -> Verdict {
    let cfg = ExperimentConfig::preset(Experiment::Gmm1d);
    let t0 = Instant::now();
    let (spec, rep) = match solve_config(&cfg) {
        Ok(r) => r,
        Err(e) => return err(e),
    };
    let secs = t0.elapsed().as_secs_f64();
    let obj = rep.objective;
    let converged = rep.converged;
    shared.grid = Some(artifact(spec, rep));
    let mut fine = cfg.clone();
    fine.grid.nx = 256;
    let t1 = Instant::now();
    let obj_fine = match solve_config(&fine) {
        Ok((_, r)) => r.objective,
        Err(e) => return err(e),
    };
    let secs_fine = t1.elapsed().as_secs_f64();
    let rel = (obj - 3.493).abs() / 3.493;
    let refine = (obj_fine - obj).abs() / obj;
    verdict(
        rel < 0.05 && secs < 600.0 && refine < 0.01,
        format!(
            "objective {obj:.4} (converged: {converged}), {:.1}% from 3.493 (< 5%), {secs:.0} s \
             (< 600 s); N_x = 256 gives {obj_fine:.4} ({secs_fine:.0} s), change {:.2}% (< 1%)",
            100.0 * rel,
            100.0 * refine
        ),
    )
}

fn criterion_7(shared: &mut Shared) -> Verdict {
    let cfg = ExperimentConfig::preset(Experiment::Gmm1d);
    let t0 = Instant::now();
    let out = match fit(&cfg, None) {
        Ok(o) => o,
        Err(e) => return err(e),
    };
    let secs = t0.elapsed().as_secs_f64();
    let s = match evaluate(&cfg, &out.params) {
        Ok(s) => s,
        Err(e) => return err(e),
    };
    shared.field = Some(out.params);
    let Some(kl) = s.kl else {
        return err("no KL estimate");
    };
    let Some(g) = &shared.grid else {
        return err("grid reference unavailable");
    };
    let gap = (s.mean_b - g.objective).abs() / g.objective;
    verdict(
        kl.mean < 0.05 && gap < 0.15 && secs < 1800.0,
        format!(
            "KL {:.4} (< 0.05), mean B {:.4} vs grid {:.4}: {:.1}% (< 15%), diffusion \
             correction {:.4}, training {secs:.0} s (< 1800 s)",
            kl.mean,
            s.mean_b,
            g.objective,
            100.0 * gap,
            s.diffusion_correction
        ),
    )
}

fn criterion_8(shared: &Shared) -> Verdict {
    let (Some(g), Some(f)) = (&shared.grid, &shared.field) else {
        return err("needs the grid reference and the trained field");
    };
    let cfg = ExperimentConfig::preset(Experiment::Gmm1d);
    let t0 = Instant::now();
    let r = match recover(&cfg, f) {
        Ok(r) => r,
        Err(e) => return err(e),
    };
    let secs = t0.elapsed().as_secs_f64();
    let neural = Side::Neural(NeuralSide {
        drift: r.drift,
        horizon: cfg.score.horizon,
        steps: cfg.score.steps,
        train: None,
    });
    let grid = Side::Grid(g.clone());
    match compare(&neural, &grid, [-3.0, 3.0], cfg.compare.points) {
        Ok(rep) => verdict(
            rep.drift_l2 < 0.2 && rep.score_l2 < 0.2,
            format!(
                "drift error {:.4}, score error {:.4} (each < 0.2) on [-3, 3]; score fit {secs:.0} s",
                rep.drift_l2, rep.score_l2
            ),
        ),
        Err(e) => err(e),
    }
}

/// Training budget of one sweep cell.
fn sweep_config(parameter: SweepParam, values: Vec<f64>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(Experiment::Gmm1d);
    cfg.train.steps = 10;
    cfg.train.batch_size = 128;
    cfg.train.iterations = 600;
    cfg.eval_samples = 5_000;
    cfg.sweep = Some(SweepSpec {
        parameter,
        values,
        seeds: 5,
    });
    cfg
}

fn inversions(v: &[f64], increasing: bool) -> usize {
    v.windows(2)
        .filter(|p| if increasing { p[1] < p[0] } else { p[1] > p[0] })
        .count()
}

fn fmt_list(v: &[f64]) -> String {
    let s: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", s.join(", "))
}

fn criterion_9() -> Verdict {
    let cfg = sweep_config(SweepParam::Alpha, vec![1.0, 5.0, 10.0, 50.0, 100.0]);
    let t0 = Instant::now();
    let r = match run_sweep(&cfg, None) {
        Ok(r) => r,
        Err(e) => return err(e),
    };
    let jb: Vec<f64> = r.stats.iter().map(|s| s.j_b_mean).collect();
    let kl: Vec<f64> = r.stats.iter().map(|s| s.kl_mean.unwrap_or(f64::NAN)).collect();
    let (ij, ik) = (inversions(&jb, true), inversions(&kl, false));
    verdict(
        ij <= 1 && ik <= 1 && kl.iter().all(|k| k.is_finite()),
        format!(
            "mean J_B {} ({ij} inversions), mean KL {} ({ik} inversions), at most 1 each; {:.0} s",
            fmt_list(&jb),
            fmt_list(&kl),
            t0.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_10() -> Verdict {
    let cfg = sweep_config(SweepParam::Sigma, vec![0.1, 0.5, 1.0]);
    let t0 = Instant::now();
    let r = match run_sweep(&cfg, None) {
        Ok(r) => r,
        Err(e) => return err(e),
    };
    let norms: Vec<f64> = r.stats.iter().map(|s| s.f0_norm_mean).collect();
    let increasing = norms.windows(2).all(|p| p[1] > p[0]);
    let sweep_secs = t0.elapsed().as_secs_f64();

    // small-noise field at the full training budget against transport
    let mut ot = ExperimentConfig::preset(Experiment::Gmm1d);
    ot.grid.sigma = Some(0.0);
    let g = match solve_config(&ot) {
        Ok((spec, rep)) => artifact(spec, rep),
        Err(e) => return err(e),
    };
    let mut small = ExperimentConfig::preset(Experiment::Gmm1d);
    small.train.sigma = 0.1;
    small.score.sigma = 0.1;
    let f = match fit(&small, None) {
        Ok(o) => o.params,
        Err(e) => return err(e),
    };
    let e = match field_error_vs_grid(&f, &g, [-3.0, 3.0]) {
        Ok(e) => e,
        Err(e) => return err(e),
    };
    verdict(
        increasing && e < 0.3,
        format!(
            "mean |f(., 0)| over sigma {{0.1, 0.5, 1}}: {} (increasing, {sweep_secs:.0} s); \
             sigma = 0.1 field vs sigma = 0 grid velocity: {e:.4} (< 0.3); {:.0} s",
            fmt_list(&norms),
            t0.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_11() -> Verdict {
    let mut cfg = ExperimentConfig::preset(Experiment::DoubleWell);
    cfg.sample.sde_paths = 0;
    let dir = tempfile::tempdir().unwrap();
    let t0 = Instant::now();
    let ck = dir.path().join("train");
    if let Err(e) = sbp_cli::commands::train::cmd_train(&cfg, &ck) {
        return err(e);
    }
    let s = match cmd_sample(&cfg, &ck.join(FIELD_FILE), None, &dir.path().join("sample")) {
        Ok(s) => s,
        Err(e) => return err(e),
    };
    let Some(dw) = s.double_well else {
        return err("no double-well statistics");
    };
    verdict(
        dw.below_midpoint_fraction >= 0.9 && s.energy_distance < 0.05,
        format!(
            "paths below U(0, 0) = {:.3}: {:.3} (>= 0.9); energy distance {:.4} (< 0.05); \
             upper half-plane at mid-time {:.3}; {:.0} s",
            dw.midpoint_potential,
            dw.below_midpoint_fraction,
            s.energy_distance,
            dw.upper_fraction,
            t0.elapsed().as_secs_f64()
        ),
    )
}

fn main() -> ExitCode {
    // libtest flags (e.g. --nocapture) are accepted and ignored
    let fast = std::env::var("SBP_ACCEPTANCE").is_ok_and(|v| v == "fast");
    let mut shared = Shared {
        grid: None,
        field: None,
    };
    let mut failed = 0;
    let mut report = |n: usize, v: Option<Verdict>| match v {
        Some(v) => {
            println!("criterion {n}: {} {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
            if !v.pass {
                failed += 1;
            }
        }
        None => println!("criterion {n}: SKIP (SBP_ACCEPTANCE=fast)"),
    };
    for n in 1..=12 {
        let t0 = Instant::now();
        let v = match n {
            2 => Some(criterion_2()),
            3 => Some(criterion_3()),
            4 => Some(criterion_4()),
            5 => Some(criterion_5()),
            6 => Some(criterion_6()),
            12 => Some(criterion_12()),
            _ if fast => None,
            1 => Some(criterion_1(&mut shared)),
            7 => Some(criterion_7(&mut shared)),
            8 => Some(criterion_8(&shared)),
            9 => Some(criterion_9()),
            10 => Some(criterion_10()),
            _ => Some(criterion_11()),
        };
        report(n, v);
        eprintln!("  ({:.1} s)", t0.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

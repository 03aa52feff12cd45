use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sbp_core::flow::TimeGrid;
use sbp_core::nn::{
    eval_field, jacobian, DivergenceMode, NetSpec, ParamVector, ProbeConfig, ProbeDist,
};
use sbp_core::score::{
    generate_trajectory_dataset, jsm_loss, jsm_loss_and_grad, jsm_terms, recover_drift,
    train_score, train_score_from, write_drift_csv, write_score_history_csv, ScoreError,
    ScoreMatchConfig, ScoreMode, TimeWeight, TrajectoryDataset,
};

fn zero(d: usize) -> ParamVector {
    ParamVector::affine(&vec![0.0; d * d], &vec![0.0; d]).unwrap()
}

fn normals(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn exact() -> DivergenceMode {
    DivergenceMode::Exact
}

fn rademacher(count: usize, seed: u64) -> DivergenceMode {
    DivergenceMode::Hutchinson(ProbeConfig::new(ProbeDist::Rademacher, count, seed).unwrap())
}

/// Points at every node of a 4-step grid, `d`-dimensional normals.
fn frozen_dataset(d: usize, n: usize, seed: u64) -> TrajectoryDataset {
    let grid = TimeGrid::new(1.0, 4).unwrap();
    let pts = normals(n * d, seed);
    let nodes = (0..n).map(|i| i % 5).collect();
    TrajectoryDataset::from_points(d, grid, pts, nodes).unwrap()
}

/// `sqrt(sum rho |err|^2 / sum rho)` over an even grid on `[lo, hi]`.
fn weighted_l2(lo: f64, hi: f64, rho: impl Fn(f64) -> f64, err: impl Fn(f64) -> f64) -> f64 {
    let n = 400;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..=n {
        let x = lo + (hi - lo) * i as f64 / n as f64;
        let r = rho(x);
        num += r * err(x).powi(2);
        den += r;
    }
    (num / den).sqrt()
}

fn gauss(var: f64) -> impl Fn(f64) -> f64 {
    move |x| (-0.5 * x * x / var).exp()
}

#[test]
fn zero_score_gives_zero_loss() {
    let data = frozen_dataset(2, 50, 1);
    for trace in [exact(), rademacher(3, 2)] {
        let cfg = ScoreMatchConfig {
            trace,
            net: NetSpec::new(2, 8),
            ..Default::default()
        };
        let l = jsm_loss(&zero(2), &zero(2), &data, &cfg, 0).unwrap();
        assert_eq!(l, 0.0);
    }
}

#[test]
fn linear_model_minimizer_matches_gaussian_score() {
    let grid = TimeGrid::new(1.0, 1).unwrap();
    let n = 20_000;
    let data = TrajectoryDataset::from_points(1, grid, normals(n, 3), vec![0; n]).unwrap();
    let cfg = ScoreMatchConfig {
        trace: exact(),
        ..Default::default()
    };
    // brute-force sweep over theta
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..=2000 {
        let theta = -2.0 + i as f64 * 1e-3;
        let s = ParamVector::affine(&[theta], &[0.0]).unwrap();
        let l = jsm_loss(&s, &zero(1), &data, &cfg, 0).unwrap();
        if l < best.0 {
            best = (l, theta);
        }
    }
    assert!((best.1 + 1.0).abs() < 0.03, "sweep minimizer {}", best.1);

    let cfg = ScoreMatchConfig {
        lr: 1e-2,
        iterations: 1500,
        batch_size: 256,
        ..Default::default()
    };
    let out = train_score_from(&zero(1), &cfg, &data, zero(1), &mut |_, _| {}).unwrap();
    let theta = out.params.values()[0];
    assert!((theta + 1.0).abs() < 0.05, "trained theta {theta}");
}

#[test]
fn hutchinson_trace_is_unbiased() {
    let spec = NetSpec::new(2, 16);
    let s = ParamVector::init(&spec, 5).unwrap();
    let grid = TimeGrid::new(1.0, 2).unwrap();
    let x = [0.4, -0.7];
    let data = TrajectoryDataset::from_points(2, grid, x.to_vec(), vec![1]).unwrap();
    let base = ScoreMatchConfig {
        net: spec,
        ..Default::default()
    };
    let exact_loss = jsm_loss(
        &s,
        &zero(2),
        &data,
        &ScoreMatchConfig {
            trace: exact(),
            ..base.clone()
        },
        0,
    )
    .unwrap();
    // oracle: trace of the Jacobian plus |s|^2 / 2
    let j = jacobian(&s, &x, 0.5).unwrap();
    let v = eval_field(&s, &x, 0.5).unwrap();
    let oracle = j[0] + j[3] + 0.5 * (v[0] * v[0] + v[1] * v[1]);
    assert!((exact_loss - oracle).abs() < 1e-12 * oracle.abs().max(1.0));

    let cfg = ScoreMatchConfig {
        trace: rademacher(1, 11),
        ..base.clone()
    };
    let exact_trace = j[0] + j[3];
    let n = 10_000;
    let terms: Vec<_> = (0..n)
        .map(|it| jsm_terms(&s, &zero(2), &data, &cfg, it).unwrap())
        .collect();
    let mean_se = |v: Vec<f64>| {
        let m = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        (m, (var / n as f64).sqrt())
    };
    let (m, se) = mean_se(terms.iter().map(|t| t.trace).collect());
    assert!(
        (m - exact_trace).abs() <= 3.0 * se,
        "{m} vs {exact_trace}, se {se}"
    );
    assert!(
        (m - exact_trace).abs() < 0.01 * exact_trace.abs(),
        "{m} vs {exact_trace}"
    );
    // the whole objective is unbiased too
    let (m, se) = mean_se(terms.iter().map(|t| t.total()).collect());
    assert!(
        (m - exact_loss).abs() <= 3.0 * se,
        "{m} vs {exact_loss}, se {se}"
    );
}

fn fd_check(cfg: &ScoreMatchConfig, f: &ParamVector, data: &TrajectoryDataset) -> f64 {
    let s = ParamVector::init(&cfg.net, 7).unwrap();
    let (l, g) = jsm_loss_and_grad(&s, f, data, cfg, 3).unwrap();
    assert_eq!(l, jsm_loss(&s, f, data, cfg, 3).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let k = rng.random_range(0..s.len());
        let mut vp = s.values().to_vec();
        let mut vm = vp.clone();
        vp[k] += eps;
        vm[k] -= eps;
        let lp = jsm_loss(
            &ParamVector::from_values(s.layout().clone(), vp).unwrap(),
            f,
            data,
            cfg,
            3,
        )
        .unwrap();
        let lm = jsm_loss(
            &ParamVector::from_values(s.layout().clone(), vm).unwrap(),
            f,
            data,
            cfg,
            3,
        )
        .unwrap();
        let fd = (lp - lm) / (2.0 * eps);
        worst = worst.max((g[k] - fd).abs() / fd.abs().max(g[k].abs()).max(1e-3));
    }
    worst
}

#[test]
fn gradient_matches_finite_differences() {
    let data = frozen_dataset(2, 6, 4);
    let f = ParamVector::init(&NetSpec::new(2, 8), 9).unwrap();
    for (trace, mode) in [
        (exact(), ScoreMode::ParameterizeScore),
        (rademacher(2, 1), ScoreMode::ParameterizeScore),
        (exact(), ScoreMode::ParameterizeDrift),
        (rademacher(3, 2), ScoreMode::ParameterizeDrift),
    ] {
        let cfg = ScoreMatchConfig {
            trace,
            mode,
            sigma: 0.7,
            weight: TimeWeight::Linear {
                start: 1.0,
                end: 2.0,
            },
            net: NetSpec::new(2, 8).with_freqs(2),
            ..Default::default()
        };
        let worst = fd_check(&cfg, &f, &data);
        assert!(worst <= 1e-5, "{trace:?} {mode:?}: {worst}");
    }
}

#[test]
fn drift_mode_needs_positive_sigma() {
    let data = frozen_dataset(1, 4, 1);
    let cfg = ScoreMatchConfig {
        sigma: 0.0,
        mode: ScoreMode::ParameterizeDrift,
        ..Default::default()
    };
    match jsm_loss(&zero(1), &zero(1), &data, &cfg, 0) {
        Err(ScoreError::InvalidConfig(m)) => assert!(m.contains("parameterize_score"), "{m}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn empty_inputs_are_reported() {
    let grid = TimeGrid::new(1.0, 4).unwrap();
    let d = generate_trajectory_dataset(&zero(1), None, None, 0, grid, 1, 1).unwrap();
    assert!(d.is_empty());
    assert!(matches!(
        jsm_loss(&zero(1), &zero(1), &d, &ScoreMatchConfig::default(), 0),
        Err(ScoreError::EmptyDataset)
    ));
}

#[test]
fn zero_field_dataset_repeats_the_draws() {
    let grid = TimeGrid::new(1.0, 5).unwrap();
    let d = generate_trajectory_dataset(&zero(2), None, None, 30, grid, 8, 1).unwrap();
    assert_eq!(d.len(), 30 * 6);
    assert_eq!(d.dropped, 0);
    for p in 0..30 {
        let first = d.point(p * 6).to_vec();
        for k in 0..6 {
            assert_eq!(d.nodes[p * 6 + k], k);
            assert_eq!(d.point(p * 6 + k), &first[..]);
        }
    }
    // parallel generation agrees
    let e = generate_trajectory_dataset(&zero(2), None, None, 30, grid, 8, 4).unwrap();
    assert_eq!(d, e);
}

#[test]
fn contracting_field_paths_follow_reverse_flow() {
    let grid = TimeGrid::new(1.0, 20).unwrap();
    let f = ParamVector::affine(&[-1.0], &[0.0]).unwrap();
    let d = generate_trajectory_dataset(&f, None, None, 50, grid, 3, 1).unwrap();
    for p in 0..50 {
        let z1 = d.point(p * 21 + 20)[0];
        for k in 0..=20 {
            let t = grid.node(k);
            let want = z1 * (1.0 - t).exp();
            assert!((d.point(p * 21 + k)[0] - want).abs() < 1e-6 * want.abs().max(1.0));
        }
    }
}

#[test]
fn exploding_paths_are_dropped() {
    let grid = TimeGrid::new(1.0, 10).unwrap();
    let f = ParamVector::affine(&[1e300], &[0.0]).unwrap();
    let d = generate_trajectory_dataset(&f, None, None, 5, grid, 3, 1).unwrap();
    assert_eq!(d.dropped, 5);
    assert!(d.is_empty());
}

fn score_cfg() -> ScoreMatchConfig {
    ScoreMatchConfig {
        net: NetSpec::new(1, 16),
        steps: 10,
        ..Default::default()
    }
}

#[test]
fn zero_field_score_is_minus_x() {
    let cfg = score_cfg();
    let data =
        generate_trajectory_dataset(&zero(1), None, None, cfg.n_paths, cfg.grid().unwrap(), 1, 1)
            .unwrap();
    let out = train_score(&zero(1), &cfg, &data).unwrap();
    for t in [0.0, 0.3, 1.0] {
        let err = weighted_l2(-3.0, 3.0, gauss(1.0), |x| {
            eval_field(&out.params, &[x], t).unwrap()[0] + x
        });
        assert!(err < 0.1, "t = {t}: {err}");
    }
}

#[test]
fn contracting_flow_score_matches_marginal_precision() {
    let cfg = score_cfg();
    let f = ParamVector::affine(&[-1.0], &[0.0]).unwrap();
    let data = generate_trajectory_dataset(&f, None, None, cfg.n_paths, cfg.grid().unwrap(), 2, 1)
        .unwrap();
    let out = train_score(&f, &cfg, &data).unwrap();
    for t in [0.0f64, 0.5, 1.0] {
        // marginal at t is N(0, e^{2(1 - t)})
        let var = (2.0 * (1.0 - t)).exp();
        let sd = var.sqrt();
        let err = weighted_l2(-4.0 * sd, 4.0 * sd, gauss(var), |x| {
            eval_field(&out.params, &[x], t).unwrap()[0] + x / var
        });
        assert!(err < 0.1, "t = {t}: {err}");
    }
}

#[test]
fn drift_mode_learns_drift_directly() {
    let sigma = 0.8;
    let cfg = ScoreMatchConfig {
        mode: ScoreMode::ParameterizeDrift,
        sigma,
        ..score_cfg()
    };
    let data =
        generate_trajectory_dataset(&zero(1), None, None, cfg.n_paths, cfg.grid().unwrap(), 1, 1)
            .unwrap();
    let out = train_score(&zero(1), &cfg, &data).unwrap();
    let r = recover_drift(&zero(1), &out.params, sigma, ScoreMode::ParameterizeDrift).unwrap();
    let err = weighted_l2(-3.0, 3.0, gauss(1.0), |x| {
        r.drift(&[x], 0.5)[0] + sigma * sigma * x
    });
    assert!(err < 0.1, "{err}");
}

#[test]
fn training_is_reproducible_and_worker_independent() {
    let data = frozen_dataset(1, 200, 5);
    let cfg = ScoreMatchConfig {
        net: NetSpec::new(1, 8),
        iterations: 20,
        batch_size: 32,
        ..Default::default()
    };
    let a = train_score(&zero(1), &cfg, &data).unwrap();
    let b = train_score(
        &zero(1),
        &ScoreMatchConfig {
            workers: 3,
            ..cfg.clone()
        },
        &data,
    )
    .unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.params, b.params);
    let c = train_score(&zero(1), &ScoreMatchConfig { seed: 1, ..cfg }, &data).unwrap();
    assert_ne!(a.history, c.history);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("score.csv");
    write_score_history_csv(&path, &a.history).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(text.lines().next(), Some("iter,loss"));
    assert_eq!(text.lines().count(), 21);
}

#[test]
fn divergence_keeps_last_good_parameters() {
    let data = frozen_dataset(1, 20, 5);
    let cfg = ScoreMatchConfig {
        net: NetSpec::new(1, 8),
        iterations: 5,
        batch_size: 4,
        ..Default::default()
    };
    let init = ParamVector::init(&cfg.net, 0).unwrap();
    let bad: Vec<f64> = init.values().iter().map(|v| v * 1e200).collect();
    let bad = ParamVector::from_values(init.layout().clone(), bad).unwrap();
    match train_score_from(&zero(1), &cfg, &data, bad.clone(), &mut |_, _| {}) {
        Err(ScoreError::Diverged { last_good, .. }) => assert_eq!(*last_good, bad),
        other => panic!("{other:?}"),
    }
}

#[test]
fn drift_csv_layout_and_identity() {
    let spec = NetSpec::new(1, 8);
    let f = ParamVector::init(&spec, 1).unwrap();
    let s = ParamVector::init(&spec, 2).unwrap();
    let sigma = 0.9;
    let r = recover_drift(&f, &s, sigma, ScoreMode::ParameterizeScore).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("drift.csv");
    let xs: Vec<f64> = (0..13).map(|i| -6.0 + i as f64).collect();
    write_drift_csv(&path, &r, &xs, &[0.0, 0.5, 1.0]).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,x,f,s,u"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 39);
    for row in rows {
        let (f, s, u) = (row[2], row[3], row[4]);
        assert_eq!(f + sigma * sigma * s, u);
    }
}

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sbp_core::nn::{DivergenceMode, NetSpec, ParamVector, ProbeConfig, ProbeDist};
use sbp_core::train::{
    double_well_potential, loss_and_grad, loss_terms, DataSampler, Potential, SamplerKind,
    TerminalSpec, TrainConfig,
};

fn fd_check(cfg: &TrainConfig, batch: &[f64], prior: Option<&Potential>, seed: u64) -> f64 {
    let p = ParamVector::init(&cfg.net, seed).unwrap();
    let (terms, grad) = loss_and_grad(&p, batch, cfg, prior).unwrap();
    let plain = loss_terms(&p, batch, cfg, prior).unwrap();
    assert_eq!(terms, plain);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let k = rng.random_range(0..p.len());
        let mut vp = p.values().to_vec();
        let mut vm = vp.clone();
        vp[k] += eps;
        vm[k] -= eps;
        let jp = loss_terms(
            &ParamVector::from_values(p.layout().clone(), vp).unwrap(),
            batch,
            cfg,
            prior,
        )
        .unwrap()
        .j;
        let jm = loss_terms(
            &ParamVector::from_values(p.layout().clone(), vm).unwrap(),
            batch,
            cfg,
            prior,
        )
        .unwrap()
        .j;
        let fd = (jp - jm) / (2.0 * eps);
        let rel = (grad[k] - fd).abs() / fd.abs().max(grad[k].abs()).max(1e-3);
        worst = worst.max(rel);
    }
    worst
}

fn small_cfg(dim: usize) -> TrainConfig {
    TrainConfig {
        steps: 10,
        batch_size: 4,
        net: NetSpec::new(dim, 8).with_freqs(2).with_embed_width(4),
        ..TrainConfig::default()
    }
}

#[test]
fn gradient_matches_finite_differences_1d() {
    let cfg = small_cfg(1);
    let batch = DataSampler::new(SamplerKind::GaussianMixture1d, 1).sample(4);
    let worst = fd_check(&cfg, &batch, None, 3);
    assert!(worst <= 1e-4, "{worst}");
}

#[test]
fn gradient_matches_with_other_sigma() {
    let mut cfg = small_cfg(1);
    cfg.sigma = 0.4;
    cfg.alpha = 2.0;
    let batch = DataSampler::new(SamplerKind::GaussianMixture1d, 2).sample(4);
    let worst = fd_check(&cfg, &batch, None, 4);
    assert!(worst <= 1e-4, "{worst}");
}

#[test]
fn gradient_matches_in_2d_with_prior() {
    let mut cfg = small_cfg(2);
    cfg.terminal = Some(TerminalSpec {
        mean: vec![1.0, 0.0],
        var: vec![0.0125, 0.15],
    });
    let kind = SamplerKind::Gaussian {
        mean: vec![-1.0, 0.0],
        var: vec![0.0125, 0.15],
    };
    let batch = DataSampler::new(kind, 5).sample(4);
    let u = double_well_potential(0.5);
    let worst = fd_check(&cfg, &batch, Some(&u), 6);
    assert!(worst <= 1e-4, "{worst}");
}

#[test]
fn gradient_matches_with_hutchinson_divergence() {
    let mut cfg = small_cfg(2);
    cfg.divergence =
        DivergenceMode::Hutchinson(ProbeConfig::new(ProbeDist::Rademacher, 2, 9).unwrap());
    let batch = DataSampler::new(SamplerKind::Moons, 7).sample(4);
    let worst = fd_check(&cfg, &batch, None, 8);
    assert!(worst <= 1e-4, "{worst}");
}

#[test]
fn gradient_is_independent_of_worker_count() {
    let mut cfg = small_cfg(1);
    let batch = DataSampler::new(SamplerKind::GaussianMixture1d, 1).sample(7);
    let p = ParamVector::init(&cfg.net, 1).unwrap();
    let a = loss_and_grad(&p, &batch, &cfg, None).unwrap();
    cfg.workers = 3;
    let b = loss_and_grad(&p, &batch, &cfg, None).unwrap();
    assert_eq!(a, b);
}

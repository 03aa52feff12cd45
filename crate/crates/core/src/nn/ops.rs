use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::jet::{JetShape, JetWorkspace};
use super::params::ParamVector;
use super::time::TimeCotangent;
use super::{NnError, ProbeConfig, ProbeDist};

/// How `div f` is computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DivergenceMode {
    /// `d` forward-derivative passes (one jet with unit seeds).
    Exact,
    /// `(1/K) sum_k l_k^T grad(l_k^T f)` over `K` probe vectors.
    Hutchinson(ProbeConfig),
}

fn check_dim(p: &ParamVector, got: usize) -> Result<(), NnError> {
    if got != p.dim() {
        return Err(NnError::DimMismatch {
            expected: p.dim(),
            got,
        });
    }
    Ok(())
}

pub(crate) fn unit_dirs(d: usize) -> Vec<f64> {
    let mut e = vec![0.0; d * d];
    for i in 0..d {
        e[i * d + i] = 1.0;
    }
    e
}

/// Probe vectors (`count x dim`, row-major) for the given configuration.
pub fn draw_probes(cfg: &ProbeConfig, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    fill_probes(&mut rng, cfg.dist, cfg.count * dim)
}

pub fn fill_probes<R: Rng>(rng: &mut R, dist: ProbeDist, n: usize) -> Vec<f64> {
    match dist {
        ProbeDist::Rademacher => (0..n)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect(),
        ProbeDist::Gaussian => (0..n).map(|_| rng.sample(StandardNormal)).collect(),
    }
}

/// `f_theta(z, t)`.
pub fn eval_field(params: &ParamVector, z: &[f64], t: f64) -> Result<Vec<f64>, NnError> {
    check_dim(params, z.len())?;
    let tf = params.time_features(t);
    let mut ws = JetWorkspace::new();
    params.jet_forward(&tf, z, &[], JetShape::VALUE, &mut ws);
    Ok(ws.output().to_vec())
}

/// Row-major Jacobian `J[i][a] = d f_i / d z_a`.
pub fn jacobian(params: &ParamVector, z: &[f64], t: f64) -> Result<Vec<f64>, NnError> {
    check_dim(params, z.len())?;
    let d = params.dim();
    let tf = params.time_features(t);
    let mut ws = JetWorkspace::new();
    let shape = JetShape::first(d);
    params.jet_forward(&tf, z, &unit_dirs(d), shape, &mut ws);
    let nc = shape.ncomp();
    let out = ws.output();
    let mut jac = vec![0.0; d * d];
    for i in 0..d {
        for a in 0..d {
            jac[i * d + a] = out[i * nc + 1 + a];
        }
    }
    Ok(jac)
}

/// Per-probe values `l_k^T J l_k` for probes given row-major (`K x dim`).
pub fn divergence_probe_values(
    params: &ParamVector,
    z: &[f64],
    t: f64,
    probes: &[f64],
) -> Result<Vec<f64>, NnError> {
    check_dim(params, z.len())?;
    let d = params.dim();
    if probes.len() % d != 0 {
        return Err(NnError::DimMismatch {
            expected: d,
            got: probes.len() % d,
        });
    }
    const CHUNK: usize = 256;
    let tf = params.time_features(t);
    let mut ws = JetWorkspace::new();
    let mut values = Vec::with_capacity(probes.len() / d);
    for chunk in probes.chunks(CHUNK * d) {
        let k = chunk.len() / d;
        let shape = JetShape::first(k);
        params.jet_forward(&tf, z, chunk, shape, &mut ws);
        let nc = shape.ncomp();
        let out = ws.output();
        for a in 0..k {
            let mut v = 0.0;
            for i in 0..d {
                v += chunk[a * d + i] * out[i * nc + 1 + a];
            }
            values.push(v);
        }
    }
    Ok(values)
}

/// `div_z f(z, t)`.
pub fn divergence(
    params: &ParamVector,
    z: &[f64],
    t: f64,
    mode: DivergenceMode,
) -> Result<f64, NnError> {
    match mode {
        DivergenceMode::Exact => {
            let d = params.dim();
            let jac = jacobian(params, z, t)?;
            Ok((0..d).map(|i| jac[i * d + i]).sum())
        }
        DivergenceMode::Hutchinson(cfg) => {
            check_dim(params, z.len())?;
            let probes = draw_probes(&cfg, params.dim());
            let vals = divergence_probe_values(params, z, t, &probes)?;
            Ok(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

/// `grad_z (div_z f)(z, t)`, exact, from one second-order jet.
pub fn grad_divergence(params: &ParamVector, z: &[f64], t: f64) -> Result<Vec<f64>, NnError> {
    check_dim(params, z.len())?;
    let d = params.dim();
    let tf = params.time_features(t);
    let mut ws = JetWorkspace::new();
    let shape = JetShape::second(d);
    params.jet_forward(&tf, z, &unit_dirs(d), shape, &mut ws);
    let nc = shape.ncomp();
    let out = ws.output();
    Ok((0..d)
        .map(|a| (0..d).map(|i| out[i * nc + shape.pair_index(a, i)]).sum())
        .collect())
}

/// `J_f(z, t)^T v`, the gradient of `z -> f(z, t) . v`, by one reverse pass.
pub fn jacobian_transpose_apply(
    params: &ParamVector,
    z: &[f64],
    t: f64,
    v: &[f64],
) -> Result<Vec<f64>, NnError> {
    check_dim(params, z.len())?;
    check_dim(params, v.len())?;
    let tf = params.time_features(t);
    let mut ws = JetWorkspace::new();
    params.jet_forward(&tf, z, &[], JetShape::VALUE, &mut ws);
    let mut grad = vec![0.0; params.len()];
    let mut tcot = TimeCotangent::zeros_like(&tf);
    Ok(params.jet_backward(&tf, &mut ws, v, &mut grad, &mut tcot))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetSpec;

    fn small_net(d: usize, seed: u64) -> ParamVector {
        ParamVector::init(&NetSpec::new(d, 8).with_freqs(2), seed).unwrap()
    }

    #[test]
    fn zero_params_give_zero_field() {
        let p =
            ParamVector::zeros(crate::nn::Layout::from_spec(&NetSpec::new(2, 5)).unwrap()).unwrap();
        assert_eq!(eval_field(&p, &[0.3, -1.2], 0.4).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn affine_layer_is_az_plus_b() {
        let p = ParamVector::affine(&[1.0, 2.0, -3.0, 0.5], &[0.1, -0.2]).unwrap();
        let f = eval_field(&p, &[2.0, 1.0], 0.0).unwrap();
        assert_eq!(f, vec![1.0 * 2.0 + 2.0 + 0.1, -6.0 + 0.5 - 0.2]);
    }

    #[test]
    fn linear_field_divergence_is_trace() {
        let p = ParamVector::affine(&[1.5, 2.0, -3.0, 0.25], &[0.0, 0.0]).unwrap();
        assert_eq!(
            divergence(&p, &[0.7, -0.1], 0.3, DivergenceMode::Exact).unwrap(),
            1.75
        );
        let neg = ParamVector::affine(&[-1.0, 0.0, 0.0, -1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(
            divergence(&neg, &[3.0, 4.0], 0.0, DivergenceMode::Exact).unwrap(),
            -2.0
        );
    }

    #[test]
    fn linear_field_grad_divergence_vanishes() {
        let p = ParamVector::affine(&[1.5, 2.0, -3.0, 0.25], &[1.0, 0.0]).unwrap();
        assert_eq!(
            grad_divergence(&p, &[0.7, -0.1], 0.3).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn jacobian_transpose_of_linear_field() {
        let a = [1.5, 2.0, -3.0, 0.25];
        let p = ParamVector::affine(&a, &[0.0, 0.0]).unwrap();
        let v = [0.3, -2.0];
        let got = jacobian_transpose_apply(&p, &[0.1, 0.2], 0.0, &v).unwrap();
        let want = [a[0] * v[0] + a[2] * v[1], a[1] * v[0] + a[3] * v[1]];
        assert_eq!(got, want);
        assert_eq!(
            jacobian_transpose_apply(&p, &[0.1, 0.2], 0.0, &[0.0, 0.0]).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = small_net(2, 1);
        assert!(matches!(
            eval_field(&p, &[1.0], 0.0),
            Err(NnError::DimMismatch {
                expected: 2,
                got: 1
            })
        ));
        assert!(jacobian_transpose_apply(&p, &[1.0, 2.0], 0.0, &[1.0]).is_err());
    }

    fn fd_divergence(p: &ParamVector, z: &[f64], t: f64, eps: f64) -> f64 {
        let d = z.len();
        let mut total = 0.0;
        for i in 0..d {
            let mut zp = z.to_vec();
            let mut zm = z.to_vec();
            zp[i] += eps;
            zm[i] -= eps;
            total += (eval_field(p, &zp, t).unwrap()[i] - eval_field(p, &zm, t).unwrap()[i])
                / (2.0 * eps);
        }
        total
    }

    #[test]
    fn divergence_matches_finite_differences() {
        for seed in 0..5 {
            let p = small_net(2, seed);
            let z = [0.4 - seed as f64 * 0.2, 0.9];
            let exact = divergence(&p, &z, 0.6, DivergenceMode::Exact).unwrap();
            let fd = fd_divergence(&p, &z, 0.6, 1e-5);
            assert!((exact - fd).abs() < 1e-5, "{exact} vs {fd}");
        }
    }

    #[test]
    fn grad_divergence_matches_finite_differences() {
        let eps = 1e-4;
        for seed in 0..5 {
            let p = small_net(2, 10 + seed);
            let z = [0.3, -0.5 + 0.1 * seed as f64];
            let g = grad_divergence(&p, &z, 0.2).unwrap();
            for a in 0..2 {
                let mut zp = z;
                let mut zm = z;
                zp[a] += eps;
                zm[a] -= eps;
                let dp = divergence(&p, &zp, 0.2, DivergenceMode::Exact).unwrap();
                let dm = divergence(&p, &zm, 0.2, DivergenceMode::Exact).unwrap();
                let fd = (dp - dm) / (2.0 * eps);
                assert!((g[a] - fd).abs() < 1e-5, "{} vs {fd}", g[a]);
            }
        }
    }

    #[test]
    fn jacobian_transpose_matches_finite_differences() {
        let eps = 1e-6;
        let p = small_net(2, 4);
        let z = [0.2, -0.7];
        let v = [0.9, -1.3];
        let got = jacobian_transpose_apply(&p, &z, 0.5, &v).unwrap();
        for a in 0..2 {
            let mut zp = z;
            let mut zm = z;
            zp[a] += eps;
            zm[a] -= eps;
            let fp = eval_field(&p, &zp, 0.5).unwrap();
            let fm = eval_field(&p, &zm, 0.5).unwrap();
            let fd: f64 = (0..2).map(|i| v[i] * (fp[i] - fm[i]) / (2.0 * eps)).sum();
            assert!((got[a] - fd).abs() < 1e-5);
        }
    }

    #[test]
    fn hutchinson_single_probe_reproducible() {
        let p = small_net(2, 2);
        let cfg = ProbeConfig::new(ProbeDist::Gaussian, 3, 11).unwrap();
        let a = divergence(&p, &[0.1, 0.2], 0.0, DivergenceMode::Hutchinson(cfg)).unwrap();
        let b = divergence(&p, &[0.1, 0.2], 0.0, DivergenceMode::Hutchinson(cfg)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

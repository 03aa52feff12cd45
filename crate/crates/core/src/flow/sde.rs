use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{FlowError, TimeGrid};

/// Euler-Maruyama paths of `dX = u(X, t) dt + sqrt(2) sigma dW` from each row
/// of `x0`, returned as `batch x (steps + 1) x d`.
///
/// Sample `b` draws its noise from stream `b` of a ChaCha generator seeded
/// with `seed`, so paths do not depend on how the batch is split up.
pub fn sample_sde_paths(
    drift: &dyn Fn(&[f64], f64, &mut [f64]),
    sigma: f64,
    x0: &[f64],
    dim: usize,
    grid: TimeGrid,
    seed: u64,
) -> Result<Vec<f64>, FlowError> {
    grid.validate()?;
    if !(sigma >= 0.0) {
        return Err(FlowError::InvalidStep(sigma));
    }
    if dim == 0 || x0.len() % dim != 0 {
        return Err(FlowError::DimMismatch {
            expected: dim,
            got: x0.len(),
        });
    }
    let n = grid.steps;
    let h = grid.dt();
    let noise = (2.0f64).sqrt() * sigma * h.sqrt();
    let mut out = Vec::with_capacity(x0.len() * (n + 1));
    let mut u = vec![0.0; dim];
    for (b, x) in x0.chunks(dim).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64);
        let mut z = x.to_vec();
        out.extend_from_slice(&z);
        for k in 0..n {
            drift(&z, grid.node(k), &mut u);
            for i in 0..dim {
                let xi: f64 = rng.sample(StandardNormal);
                z[i] += u[i] * h + noise * xi;
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(FlowError::NonFinite { sample: b, step: k });
            }
            out.extend_from_slice(&z);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_is_forward_euler() {
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let drift = |z: &[f64], t: f64, out: &mut [f64]| out[0] = -z[0] + t;
        let paths = sample_sde_paths(&drift, 0.0, &[1.5], 1, grid, 3).unwrap();
        let mut z = 1.5;
        for k in 0..50 {
            z += (-z + grid.node(k)) * grid.dt();
            assert_eq!(paths[k + 1], z);
        }
    }

    #[test]
    fn brownian_terminal_variance() {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let n = 100_000;
        let x0 = vec![0.0; n];
        let drift = |_: &[f64], _: f64, out: &mut [f64]| out[0] = 0.0;
        let paths = sample_sde_paths(&drift, 1.0, &x0, 1, grid, 11).unwrap();
        let ends: Vec<f64> = paths.chunks(11).map(|p| p[10]).collect();
        let mean = ends.iter().sum::<f64>() / n as f64;
        let var = ends.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 2.0).abs() < 0.06, "{var}");
    }

    #[test]
    fn seeded_paths_are_reproducible_and_order_free() {
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let drift = |z: &[f64], _: f64, out: &mut [f64]| {
            out[0] = -z[1];
            out[1] = z[0];
        };
        let x0 = [0.1, 0.2, -1.0, 0.5, 2.0, 0.0];
        let a = sample_sde_paths(&drift, 0.7, &x0, 2, grid, 5).unwrap();
        let b = sample_sde_paths(&drift, 0.7, &x0, 2, grid, 5).unwrap();
        assert_eq!(a, b);
        let single = sample_sde_paths(&drift, 0.7, &x0[..2], 2, grid, 5).unwrap();
        assert_eq!(&a[..single.len()], &single[..]);
    }
}

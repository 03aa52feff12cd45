//! Closed-form densities used as endpoint marginals.

use std::f64::consts::PI;

/// A density with analytic log-density, score and score Jacobian.
pub trait LogDensity: Send + Sync {
    fn dim(&self) -> usize;
    fn log_density(&self, x: &[f64]) -> f64;
    /// `grad log rho(x)` written into `out`.
    fn score(&self, x: &[f64], out: &mut [f64]);
    /// Row-major Hessian of `log rho` at `x`, `d x d`.
    fn score_jacobian(&self, x: &[f64], out: &mut [f64]);
}

/// Gaussian with diagonal covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl Gaussian {
    pub fn standard(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            var: vec![1.0; d],
        }
    }

    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Self {
        assert_eq!(mean.len(), var.len());
        assert!(var.iter().all(|&v| v > 0.0));
        Self { mean, var }
    }
}

impl LogDensity for Gaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((xi, m), v) in x.iter().zip(&self.mean).zip(&self.var) {
            acc -= 0.5 * ((xi - m) * (xi - m) / v + (2.0 * PI * v).ln());
        }
        acc
    }

    fn score(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..x.len() {
            out[i] = -(x[i] - self.mean[i]) / self.var[i];
        }
    }

    fn score_jacobian(&self, _x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..d {
            out[i * d + i] = -1.0 / self.var[i];
        }
    }
}

/// One-dimensional mixture of Gaussians.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixture1d {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Mixture1d {
    /// `0.5 N(-3, 1) + 0.5 N(3, 1)`.
    pub fn symmetric_pair() -> Self {
        Self {
            weights: vec![0.5, 0.5],
            means: vec![-3.0, 3.0],
            stds: vec![1.0, 1.0],
        }
    }

    fn components(&self, x: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        // (weighted density, (x - m) / s^2)
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.stds)
            .map(move |((w, m), s)| {
                let u = (x - m) / s;
                (w * (-0.5 * u * u).exp() / (s * (2.0 * PI).sqrt()), u / s)
            })
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.components(x).map(|(p, _)| p).sum()
    }
}

impl LogDensity for Mixture1d {
    fn dim(&self) -> usize {
        1
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.pdf(x[0]).ln()
    }

    fn score(&self, x: &[f64], out: &mut [f64]) {
        let (mut p, mut dp) = (0.0, 0.0);
        for (pi, r) in self.components(x[0]) {
            p += pi;
            dp -= pi * r;
        }
        out[0] = dp / p;
    }

    fn score_jacobian(&self, x: &[f64], out: &mut [f64]) {
        let (mut p, mut dp, mut ddp) = (0.0, 0.0, 0.0);
        for ((pi, r), s) in self.components(x[0]).zip(&self.stds) {
            p += pi;
            dp -= pi * r;
            ddp += pi * (r * r - 1.0 / (s * s));
        }
        out[0] = ddp / p - (dp / p).powi(2);
    }
}

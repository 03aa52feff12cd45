//! Seeded samplers for the initial distributions.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::density::{Gaussian, LogDensity, Mixture1d};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SamplerKind {
    /// `0.5 N(-3, 1) + 0.5 N(3, 1)`.
    GaussianMixture1d,
    Moons,
    EightGaussians,
    Checkerboard,
    /// Diagonal Gaussian.
    Gaussian {
        mean: Vec<f64>,
        var: Vec<f64>,
    },
}

impl SamplerKind {
    pub fn dim(&self) -> usize {
        match self {
            SamplerKind::GaussianMixture1d => 1,
            SamplerKind::Gaussian { mean, .. } => mean.len(),
            _ => 2,
        }
    }

    /// Log-density, where it is available in closed form.
    pub fn density(&self) -> Option<Box<dyn LogDensity>> {
        match self {
            SamplerKind::GaussianMixture1d => Some(Box::new(Mixture1d::symmetric_pair())),
            SamplerKind::Gaussian { mean, var } => {
                Some(Box::new(Gaussian::new(mean.clone(), var.clone())))
            }
            _ => None,
        }
    }
}

/// A sampler kind plus its own RNG stream.
#[derive(Clone, Debug)]
pub struct DataSampler {
    pub kind: SamplerKind,
    rng: ChaCha8Rng,
}

impl DataSampler {
    pub fn new(kind: SamplerKind, seed: u64) -> Self {
        Self {
            kind,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    /// `n` draws, row-major `n x dim`.
    pub fn sample(&mut self, n: usize) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(n * d);
        for _ in 0..n {
            self.draw(&mut out);
        }
        out
    }

    fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    fn draw(&mut self, out: &mut Vec<f64>) {
        match &self.kind {
            SamplerKind::GaussianMixture1d => {
                let c = if self.rng.random::<bool>() { 3.0 } else { -3.0 };
                let x = c + self.normal();
                out.push(x);
            }
            SamplerKind::Gaussian { mean, var } => {
                let (mean, var) = (mean.clone(), var.clone());
                for (m, v) in mean.iter().zip(&var) {
                    let x = m + v.sqrt() * self.normal();
                    out.push(x);
                }
            }
            SamplerKind::Moons => {
                // Two interleaved half circles with noise 0.1, scaled by 2 and shifted.
                let theta = self.rng.random::<f64>() * PI;
                let (x, y) = if self.rng.random::<bool>() {
                    (theta.cos(), theta.sin())
                } else {
                    (1.0 - theta.cos(), 0.5 - theta.sin())
                };
                let nx = 0.1 * self.normal();
                let ny = 0.1 * self.normal();
                out.push(2.0 * (x + nx) - 1.0);
                out.push(2.0 * (y + ny) - 0.2);
            }
            SamplerKind::EightGaussians => {
                let k = self.rng.random_range(0..8usize);
                let a = k as f64 * PI / 4.0;
                let scale = 4.0;
                let x = scale * a.cos() + 0.5 * self.normal();
                let y = scale * a.sin() + 0.5 * self.normal();
                out.push(x / std::f64::consts::SQRT_2);
                out.push(y / std::f64::consts::SQRT_2);
            }
            SamplerKind::Checkerboard => {
                let x1 = self.rng.random::<f64>() * 4.0 - 2.0;
                let shift = if self.rng.random::<bool>() { 2.0 } else { 0.0 };
                let x2 = self.rng.random::<f64>() - shift + x1.floor().rem_euclid(2.0);
                out.push(2.0 * x1);
                out.push(2.0 * x2);
            }
        }
    }
}

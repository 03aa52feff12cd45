//! Prior potentials for the controlled problem with reference drift `-grad U`.

use serde::{Deserialize, Serialize};

/// Derivatives of a planar potential up to fourth order, all row-major.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PotentialDerivs {
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: [f64; 4],
    /// `third[(i * 2 + j) * 2 + k]`.
    pub third: [f64; 8],
    /// `fourth[((i * 2 + j) * 2 + k) * 2 + l]`.
    pub fourth: [f64; 16],
}

impl PotentialDerivs {
    /// `grad (lap U)`.
    pub fn grad_laplacian(&self) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (c, o) in out.iter_mut().enumerate() {
            *o = (0..2).map(|i| self.third[(i * 2 + i) * 2 + c]).sum();
        }
        out
    }

    /// `Hess (lap U)`, row-major.
    pub fn hess_laplacian(&self) -> [f64; 4] {
        let mut out = [0.0; 4];
        for c in 0..2 {
            for e in 0..2 {
                out[c * 2 + e] = (0..2)
                    .map(|i| self.fourth[((i * 2 + i) * 2 + c) * 2 + e])
                    .sum();
            }
        }
        out
    }

    pub fn laplacian(&self) -> f64 {
        self.hess[0] + self.hess[3]
    }
}

/// `U(x, y) = p (0.5 (x^2 - 1)^2 + y^2 + 8 exp(-((x - a)^2 + y^2) / 32))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    pub a: f64,
    pub prefactor: f64,
}

const BUMP_HEIGHT: f64 = 8.0;
/// Inverse variance of the bump, `exp(-c |w|^2 / 2)` with `c = 1/16`.
const BUMP_C: f64 = 1.0 / 16.0;

pub fn double_well_potential(a: f64) -> Potential {
    Potential { a, prefactor: 0.3 }
}

impl Potential {
    pub fn dim(&self) -> usize {
        2
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        let (x, y) = (z[0], z[1]);
        let w2 = (x - self.a).powi(2) + y * y;
        self.prefactor
            * (0.5 * (x * x - 1.0).powi(2) + y * y + BUMP_HEIGHT * (-BUMP_C * w2 / 2.0).exp())
    }

    pub fn gradient(&self, z: &[f64]) -> [f64; 2] {
        self.derivs(z).grad
    }

    pub fn derivs(&self, z: &[f64]) -> PotentialDerivs {
        let (x, y) = (z[0], z[1]);
        let w = [x - self.a, y];
        let c = BUMP_C;
        let g = BUMP_HEIGHT * (-c * (w[0] * w[0] + w[1] * w[1]) / 2.0).exp();
        let dl = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
        let s = self.prefactor;
        let mut out = PotentialDerivs {
            value: self.value(z),
            ..Default::default()
        };

        // polynomial part 0.5 (x^2-1)^2 + y^2
        let poly_grad = [2.0 * x * x * x - 2.0 * x, 2.0 * y];
        let poly_hess = [6.0 * x * x - 2.0, 0.0, 0.0, 2.0];
        for i in 0..2 {
            out.grad[i] = s * (poly_grad[i] - c * w[i] * g);
            for j in 0..2 {
                out.hess[i * 2 + j] =
                    s * (poly_hess[i * 2 + j] + (c * c * w[i] * w[j] - c * dl(i, j)) * g);
                for k in 0..2 {
                    let bump = -c * c * c * w[i] * w[j] * w[k]
                        + c * c * (dl(i, j) * w[k] + dl(i, k) * w[j] + dl(j, k) * w[i]);
                    let poly = if i == 0 && j == 0 && k == 0 {
                        12.0 * x
                    } else {
                        0.0
                    };
                    out.third[(i * 2 + j) * 2 + k] = s * (poly + bump * g);
                    for l in 0..2 {
                        let bump = c.powi(4) * w[i] * w[j] * w[k] * w[l]
                            - c.powi(3)
                                * (dl(i, j) * w[k] * w[l]
                                    + dl(i, k) * w[j] * w[l]
                                    + dl(i, l) * w[j] * w[k]
                                    + dl(j, k) * w[i] * w[l]
                                    + dl(j, l) * w[i] * w[k]
                                    + dl(k, l) * w[i] * w[j])
                            + c * c
                                * (dl(i, j) * dl(k, l) + dl(i, k) * dl(j, l) + dl(i, l) * dl(j, k));
                        let poly = if i + j + k + l == 0 { 12.0 } else { 0.0 };
                        out.fourth[((i * 2 + j) * 2 + k) * 2 + l] = s * (poly + bump * g);
                    }
                }
            }
        }
        out
    }
}

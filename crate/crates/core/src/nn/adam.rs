//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use super::{NnError, ParamVector};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn step(
        &mut self,
        params: &mut ParamVector,
        grad: &[f64],
        cfg: &AdamConfig,
    ) -> Result<(), NnError> {
        let n = params.len();
        if grad.len() != n || self.m.len() != n {
            return Err(NnError::ShapeMismatch {
                expected: n,
                got: if grad.len() != n {
                    grad.len()
                } else {
                    self.m.len()
                },
            });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(NnError::NonFinite(format!("gradient entry {i}")));
        }
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);
        let values = params.values_mut();
        for i in 0..n {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            values[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetSpec;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = ParamVector::init(&NetSpec::new(1, 4), 0).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(p.len());
        st.step(&mut p, &vec![0.0; before.len()], &AdamConfig::default())
            .unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_against_gradient_by_lr() {
        let mut p = ParamVector::affine(&[0.0], &[0.0]).unwrap();
        let mut st = AdamState::new(2);
        let cfg = AdamConfig::default();
        st.step(&mut p, &[2.0, -0.5], &cfg).unwrap();
        // m_hat = g, v_hat = g^2 at step 1
        assert!((p.values()[0] + cfg.lr).abs() < 1e-10);
        assert!((p.values()[1] - cfg.lr).abs() < 1e-10);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = ParamVector::affine(&[0.0], &[0.0]).unwrap();
        let mut st = AdamState::new(2);
        assert!(st.step(&mut p, &[1.0], &AdamConfig::default()).is_err());
    }
}

//! Scalar reverse-mode tape.
//!
//! Every arithmetic operation on a [`Var`] appends one node holding the local
//! partial derivatives with respect to at most two parents. Leaves created
//! with [`Tape::param`] are the parameters whose gradient
//! [`loss_backward`] returns.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::params::ParamVector;
use super::time::time_features_raw;
use super::NnError;

#[derive(Clone, Copy, Debug)]
struct Node {
    parents: [(usize, f64); 2],
}

/// Anything that can pull a scalar seed back to parameter gradients.
pub trait Recorded {
    fn backward(&self, seed: f64) -> Result<Vec<f64>, NnError>;
    fn param_count(&self) -> usize;
}

/// `d(loss)/d(params)` scaled by `seed`.
pub fn loss_backward(rec: &dyn Recorded, seed: f64) -> Result<Vec<f64>, NnError> {
    let g = rec.backward(seed)?;
    debug_assert_eq!(g.len(), rec.param_count());
    Ok(g)
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<Vec<usize>>,
    output: RefCell<Option<usize>>,
}

#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: usize,
    value: f64,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, parents: [(usize, f64); 2]) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { parents });
        nodes.len() - 1
    }

    /// A constant leaf (no gradient reported).
    pub fn constant(&self, value: f64) -> Var<'_> {
        let index = self.push([(usize::MAX, 0.0); 2]);
        Var {
            tape: self,
            index,
            value,
        }
    }

    /// A parameter leaf; gradients are reported in creation order.
    pub fn param(&self, value: f64) -> Var<'_> {
        let v = self.constant(value);
        self.params.borrow_mut().push(v.index);
        v
    }

    pub fn finalize(&self, output: Var<'_>) {
        *self.output.borrow_mut() = Some(output.index);
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Recorded for Tape {
    fn backward(&self, seed: f64) -> Result<Vec<f64>, NnError> {
        let out = self.output.borrow().ok_or(NnError::TapeNotFinalized)?;
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; nodes.len()];
        adj[out] = seed;
        for i in (0..=out).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            for &(p, w) in &nodes[i].parents {
                if p != usize::MAX {
                    adj[p] += a * w;
                }
            }
        }
        Ok(self.params.borrow().iter().map(|&i| adj[i]).collect())
    }

    fn param_count(&self) -> usize {
        self.params.borrow().len()
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.value
    }

    fn unary(self, value: f64, d: f64) -> Self {
        let index = self.tape.push([(self.index, d), (usize::MAX, 0.0)]);
        Var {
            tape: self.tape,
            index,
            value,
        }
    }

    fn binary(self, other: Self, value: f64, da: f64, db: f64) -> Self {
        let index = self.tape.push([(self.index, da), (other.index, db)]);
        Var {
            tape: self.tape,
            index,
            value,
        }
    }

    pub fn tanh(self) -> Self {
        let y = self.value.tanh();
        self.unary(y, 1.0 - y * y)
    }

    pub fn exp(self) -> Self {
        let y = self.value.exp();
        self.unary(y, y)
    }

    pub fn ln(self) -> Self {
        self.unary(self.value.ln(), 1.0 / self.value)
    }

    pub fn sin(self) -> Self {
        self.unary(self.value.sin(), self.value.cos())
    }

    pub fn cos(self) -> Self {
        self.unary(self.value.cos(), -self.value.sin())
    }

    pub fn sigmoid(self) -> Self {
        let y = 1.0 / (1.0 + (-self.value).exp());
        self.unary(y, y * (1.0 - y))
    }

    pub fn powi(self, n: i32) -> Self {
        self.unary(self.value.powi(n), n as f64 * self.value.powi(n - 1))
    }

    pub fn sqrt(self) -> Self {
        let y = self.value.sqrt();
        self.unary(y, 0.5 / y)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, o: Self) -> Self {
        self.binary(o, self.value + o.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, o: Self) -> Self {
        self.binary(o, self.value - o.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, o: Self) -> Self {
        self.binary(o, self.value * o.value, o.value, self.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, o: Self) -> Self {
        let q = self.value / o.value;
        self.binary(o, q, 1.0 / o.value, -q / o.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.unary(-self.value, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Self {
        self.unary(self.value + c, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Self {
        self.unary(self.value * c, c)
    }
}

impl ParamVector {
    /// Evaluate `f(z, t)` with every parameter registered as a tape leaf, in
    /// storage order. Slow; intended for checking the jet adjoint.
    pub fn eval_on_tape<'t>(&self, tape: &'t Tape, z: &[f64], t: f64) -> Vec<Var<'t>> {
        let layout = self.layout();
        let theta: Vec<Var<'t>> = self.values().iter().map(|&v| tape.param(v)).collect();
        let raw: Vec<Var<'t>> = time_features_raw(t, layout.freqs)
            .into_iter()
            .map(|v| tape.constant(v))
            .collect();
        let affine = |w: usize, b: usize, n_out: usize, x: &[Var<'t>]| -> Vec<Var<'t>> {
            (0..n_out)
                .map(|j| {
                    x.iter().enumerate().fold(theta[b + j], |acc, (i, xi)| {
                        acc + theta[w + j * x.len() + i] * *xi
                    })
                })
                .collect()
        };
        let embed: Vec<Var<'t>> = match (self.embed_off, layout.embed) {
            (Some((w, b)), Some(e)) => affine(w, b, e.output, &raw)
                .into_iter()
                .map(Var::tanh)
                .collect(),
            _ => Vec::new(),
        };
        let mut x: Vec<Var<'t>> = z.iter().map(|&v| tape.constant(v)).collect();
        let nl = layout.layers.len();
        for (l, (desc, off)) in layout.layers.iter().zip(&self.layer_off).enumerate() {
            let mut y = affine(off.w, off.b, desc.output, &x);
            if l + 1 < nl {
                y = y.into_iter().map(Var::tanh).collect();
            }
            if let Some((wg, bg, ws)) = off.gate {
                let gate = affine(wg, bg, desc.output, &embed);
                let ew = embed.len();
                y = y
                    .into_iter()
                    .enumerate()
                    .map(|(j, yj)| {
                        let shift = embed
                            .iter()
                            .enumerate()
                            .skip(1)
                            .fold(theta[ws + j * ew] * embed[0], |acc, (k, e)| {
                                acc + theta[ws + j * ew + k] * *e
                            });
                        yj * gate[j].sigmoid() + shift
                    })
                    .collect();
            }
            x = y;
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::jet::{JetShape, JetWorkspace};
    use crate::nn::time::TimeCotangent;
    use crate::nn::NetSpec;

    #[test]
    fn sum_of_squares_gradient() {
        let tape = Tape::new();
        let theta: Vec<_> = [0.5, -1.5, 2.0].iter().map(|&v| tape.param(v)).collect();
        let loss = theta
            .iter()
            .skip(1)
            .fold(theta[0] * theta[0], |acc, v| acc + *v * *v);
        tape.finalize(loss);
        let g = loss_backward(&tape, 1.0).unwrap();
        assert_eq!(g, vec![1.0, -3.0, 4.0]);
    }

    #[test]
    fn unused_parameter_has_zero_gradient() {
        let tape = Tape::new();
        let a = tape.param(2.0);
        let _b = tape.param(7.0);
        let loss = a.exp();
        tape.finalize(loss);
        let g = loss_backward(&tape, 2.0).unwrap();
        assert_eq!(g[1], 0.0);
        assert!((g[0] - 2.0 * 2f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn unfinalized_tape_errors() {
        let tape = Tape::new();
        let _ = tape.param(1.0) * 3.0;
        assert!(matches!(
            loss_backward(&tape, 1.0),
            Err(NnError::TapeNotFinalized)
        ));
    }

    #[test]
    fn tape_matches_jet_value_and_adjoint() {
        let p =
            ParamVector::init(&NetSpec::new(2, 5).with_freqs(2).with_embed_width(3), 9).unwrap();
        let z = [0.3, -0.8];
        let t = 0.35;
        let v = [1.2, -0.4];
        let tape = Tape::new();
        let out = p.eval_on_tape(&tape, &z, t);
        let loss = out[0] * v[0] + out[1] * v[1];
        tape.finalize(loss);
        let g_tape = loss_backward(&tape, 1.0).unwrap();

        let tf = p.time_features(t);
        let mut ws = JetWorkspace::new();
        p.jet_forward(&tf, &z, &[], JetShape::VALUE, &mut ws);
        assert!((ws.output()[0] - out[0].value()).abs() < 1e-14);
        let mut g = vec![0.0; p.len()];
        let mut tc = TimeCotangent::zeros_like(&tf);
        p.jet_backward(&tf, &mut ws, &v, &mut g, &mut tc);
        p.time_features_backward(&tf, &tc, &mut g);
        for (a, b) in g.iter().zip(&g_tape) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

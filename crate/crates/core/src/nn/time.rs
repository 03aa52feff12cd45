//! Time conditioning: sine/cosine features, the embedding MLP, and the
//! per-layer gates and shifts derived from it.
//!
//! Everything here depends on `t` alone, so callers that evaluate many points
//! at the same time (a batch on a fixed integrator grid) compute the features
//! once and share them.

use super::params::ParamVector;

/// Raw features `[sin(w_1 t) .. sin(w_K t), cos(w_1 t) .. cos(w_K t)]` with `w_k = k`.
pub fn time_features_raw(t: f64, freqs: usize) -> Vec<f64> {
    let mut out = vec![0.0; 2 * freqs];
    for k in 0..freqs {
        let (s, c) = ((k + 1) as f64 * t).sin_cos();
        out[k] = s;
        out[freqs + k] = c;
    }
    out
}

/// Time-dependent quantities consumed by the field layers.
#[derive(Clone, Debug)]
pub struct TimeFeatures {
    pub t: f64,
    pub(crate) raw: Vec<f64>,
    /// Embedding MLP output (post-tanh).
    pub(crate) embed: Vec<f64>,
    /// `sigmoid(W_g e + b_g)` per layer; empty for ungated layers.
    pub(crate) gates: Vec<Vec<f64>>,
    /// `W_t e` per layer; empty for ungated layers.
    pub(crate) shifts: Vec<Vec<f64>>,
}

/// Cotangents on gates and shifts, accumulated across every evaluation that
/// shared a [`TimeFeatures`].
#[derive(Clone, Debug)]
pub struct TimeCotangent {
    pub(crate) gates: Vec<Vec<f64>>,
    pub(crate) shifts: Vec<Vec<f64>>,
}

impl TimeCotangent {
    pub fn zeros_like(tf: &TimeFeatures) -> Self {
        Self {
            gates: tf.gates.iter().map(|g| vec![0.0; g.len()]).collect(),
            shifts: tf.shifts.iter().map(|s| vec![0.0; s.len()]).collect(),
        }
    }

    pub fn clear(&mut self) {
        self.gates.iter_mut().for_each(|g| g.fill(0.0));
        self.shifts.iter_mut().for_each(|s| s.fill(0.0));
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.gates.iter_mut().zip(&other.gates) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.shifts.iter_mut().zip(&other.shifts) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ParamVector {
    pub fn time_features(&self, t: f64) -> TimeFeatures {
        let layout = self.layout();
        let v = self.values();
        let raw = time_features_raw(t, layout.freqs);
        let embed = match (self.embed_off, layout.embed) {
            (Some((w, b)), Some(e)) => (0..e.output)
                .map(|j| {
                    let row = &v[w + j * e.input..w + (j + 1) * e.input];
                    let a: f64 = row.iter().zip(&raw).map(|(x, y)| x * y).sum();
                    (a + v[b + j]).tanh()
                })
                .collect(),
            _ => Vec::new(),
        };
        let ew = embed.len();
        let mut gates = Vec::with_capacity(layout.layers.len());
        let mut shifts = Vec::with_capacity(layout.layers.len());
        for (l, off) in layout.layers.iter().zip(&self.layer_off) {
            match off.gate {
                Some((wg, bg, ws)) => {
                    let mut g = vec![0.0; l.output];
                    let mut s = vec![0.0; l.output];
                    for j in 0..l.output {
                        let rg = &v[wg + j * ew..wg + (j + 1) * ew];
                        let rs = &v[ws + j * ew..ws + (j + 1) * ew];
                        let mut ag = v[bg + j];
                        let mut as_ = 0.0;
                        for k in 0..ew {
                            ag += rg[k] * embed[k];
                            as_ += rs[k] * embed[k];
                        }
                        g[j] = sigmoid(ag);
                        s[j] = as_;
                    }
                    gates.push(g);
                    shifts.push(s);
                }
                None => {
                    gates.push(Vec::new());
                    shifts.push(Vec::new());
                }
            }
        }
        TimeFeatures {
            t,
            raw,
            embed,
            gates,
            shifts,
        }
    }

    /// Pull gate/shift cotangents back into parameter gradients.
    pub fn time_features_backward(&self, tf: &TimeFeatures, cot: &TimeCotangent, grad: &mut [f64]) {
        let layout = self.layout();
        let v = self.values();
        let ew = tf.embed.len();
        let mut e_bar = vec![0.0; ew];
        for ((l, off), (g, (gc, sc))) in layout
            .layers
            .iter()
            .zip(&self.layer_off)
            .zip(tf.gates.iter().zip(cot.gates.iter().zip(&cot.shifts)))
        {
            let Some((wg, bg, ws)) = off.gate else {
                continue;
            };
            for j in 0..l.output {
                let a_bar = gc[j] * g[j] * (1.0 - g[j]);
                grad[bg + j] += a_bar;
                let s_bar = sc[j];
                for k in 0..ew {
                    grad[wg + j * ew + k] += a_bar * tf.embed[k];
                    grad[ws + j * ew + k] += s_bar * tf.embed[k];
                    e_bar[k] += a_bar * v[wg + j * ew + k] + s_bar * v[ws + j * ew + k];
                }
            }
        }
        if let (Some((w, b)), Some(e)) = (self.embed_off, layout.embed) {
            for j in 0..e.output {
                let pre_bar = e_bar[j] * (1.0 - tf.embed[j] * tf.embed[j]);
                grad[b + j] += pre_bar;
                for (k, r) in tf.raw.iter().enumerate() {
                    grad[w + j * e.input + k] += pre_bar * r;
                }
            }
        }
    }
}

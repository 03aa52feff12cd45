//! Flat parameter storage and the layer layout that gives it meaning.
//!
//! Every network in the crate is a stack of field layers mapping `R^d -> R^d`,
//! optionally conditioned on time through a sine/cosine embedding followed by
//! a one-layer tanh MLP. Gated layers are ConcatSquash layers:
//!
//! ```text
//! out = act(W x + b) * sigmoid(W_g e(t) + b_g) + W_t e(t)
//! ```
//!
//! where `act` is `tanh` on every layer except the last, which is linear.
//! Ungated layers are plain affine maps `act(W x + b)` and exist mostly so
//! that tests can build closed-form fields such as `f(z) = A z + b`.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NetSpec, NnError};

/// Shape of one layer in the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDesc {
    pub input: usize,
    pub output: usize,
    pub time_gate: bool,
}

/// Ordered layer descriptors plus the time-embedding configuration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    /// Input (and output) dimension of the field.
    pub dim: usize,
    /// Number of sine/cosine frequency pairs in the time features.
    pub freqs: usize,
    /// Embedding MLP layer (`2 * freqs -> width`, tanh), present iff any layer is gated.
    pub embed: Option<LayerDesc>,
    pub layers: Vec<LayerDesc>,
}

/// Offsets of one field layer's blocks inside the flat vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct LayerOffsets {
    pub w: usize,
    pub b: usize,
    /// `(w_gate, b_gate, w_shift)` when the layer is gated.
    pub gate: Option<(usize, usize, usize)>,
}

impl LayerDesc {
    pub fn param_count(&self, embed_width: usize) -> usize {
        let base = self.output * self.input + self.output;
        if self.time_gate {
            base + 2 * self.output * embed_width + self.output
        } else {
            base
        }
    }
}

impl Layout {
    pub fn from_spec(spec: &NetSpec) -> Result<Self, NnError> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.layers);
        for l in 0..spec.layers {
            let input = if l == 0 { spec.dim } else { spec.hidden };
            let output = if l + 1 == spec.layers {
                spec.dim
            } else {
                spec.hidden
            };
            layers.push(LayerDesc {
                input,
                output,
                time_gate: true,
            });
        }
        Ok(Self {
            dim: spec.dim,
            freqs: spec.freqs,
            embed: Some(LayerDesc {
                input: 2 * spec.freqs,
                output: spec.embed_width,
                time_gate: false,
            }),
            layers,
        })
    }

    /// Single ungated affine layer `R^d -> R^d` with no activation.
    pub fn affine(dim: usize) -> Self {
        Self {
            dim,
            freqs: 0,
            embed: None,
            layers: vec![LayerDesc {
                input: dim,
                output: dim,
                time_gate: false,
            }],
        }
    }

    pub fn embed_width(&self) -> usize {
        self.embed.map_or(0, |e| e.output)
    }

    pub fn max_width(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.input.max(l.output))
            .max()
            .unwrap_or(self.dim)
    }

    pub fn param_count(&self) -> usize {
        let e = self.embed_width();
        self.embed.map_or(0, |l| l.param_count(0))
            + self.layers.iter().map(|l| l.param_count(e)).sum::<usize>()
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.dim == 0 || self.layers.is_empty() {
            return Err(NnError::InvalidLayout("empty network".into()));
        }
        let mut width = self.dim;
        for (i, l) in self.layers.iter().enumerate() {
            if l.input != width || l.output == 0 {
                return Err(NnError::InvalidLayout(format!(
                    "layer {i} expects input {} but receives {width}",
                    l.input
                )));
            }
            if l.time_gate && self.embed.is_none() {
                return Err(NnError::InvalidLayout(format!(
                    "layer {i} is time-gated but the layout has no embedding"
                )));
            }
            width = l.output;
        }
        if width != self.dim {
            return Err(NnError::InvalidLayout(format!(
                "network maps R^{} to R^{width}",
                self.dim
            )));
        }
        if let Some(e) = self.embed {
            if e.input != 2 * self.freqs || e.output == 0 {
                return Err(NnError::InvalidLayout("bad embedding layer".into()));
            }
        }
        Ok(())
    }

    /// Offsets of `(W_e, b_e)` followed by per-layer offsets.
    pub(crate) fn offsets(&self) -> (Option<(usize, usize)>, Vec<LayerOffsets>) {
        let mut at = 0;
        let embed = self.embed.map(|e| {
            let w = at;
            at += e.output * e.input;
            let b = at;
            at += e.output;
            (w, b)
        });
        let ew = self.embed_width();
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let w = at;
                at += l.output * l.input;
                let b = at;
                at += l.output;
                let gate = l.time_gate.then(|| {
                    let wg = at;
                    at += l.output * ew;
                    let bg = at;
                    at += l.output;
                    let ws = at;
                    at += l.output * ew;
                    (wg, bg, ws)
                });
                LayerOffsets { w, b, gate }
            })
            .collect();
        (embed, layers)
    }
}

/// Flat parameter vector with its layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Layout,
    pub(crate) embed_off: Option<(usize, usize)>,
    pub(crate) layer_off: Vec<LayerOffsets>,
}

impl ParamVector {
    pub fn zeros(layout: Layout) -> Result<Self, NnError> {
        let n = layout.param_count();
        Self::from_values(layout, vec![0.0; n])
    }

    pub fn from_values(layout: Layout, values: Vec<f64>) -> Result<Self, NnError> {
        layout.validate()?;
        if values.len() != layout.param_count() {
            return Err(NnError::ShapeMismatch {
                expected: layout.param_count(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(NnError::NonFinite(format!("parameter {i}")));
        }
        let (embed_off, layer_off) = layout.offsets();
        Ok(Self {
            values,
            layout,
            embed_off,
            layer_off,
        })
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialization. Weights fed
    /// by the time embedding use the embedding width as fan-in.
    pub fn init(spec: &NetSpec, seed: u64) -> Result<Self, NnError> {
        let layout = Layout::from_spec(spec)?;
        let mut p = Self::zeros(layout)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |vals: &mut [f64], fan_in: usize| {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            for v in vals {
                *v = rng.random_range(-bound..=bound);
            }
        };
        let ew = p.layout.embed_width();
        if let (Some((w, b)), Some(e)) = (p.embed_off, p.layout.embed) {
            let end = b + e.output;
            fill(&mut p.values[w..end], e.input);
        }
        for (l, off) in p.layout.layers.clone().iter().zip(p.layer_off.clone()) {
            fill(&mut p.values[off.w..off.b + l.output], l.input);
            if let Some((wg, _bg, ws)) = off.gate {
                fill(&mut p.values[wg..ws + l.output * ew], ew);
            }
        }
        Ok(p)
    }

    /// `f(z) = A z + b` with `a` given row-major.
    pub fn affine(a: &[f64], b: &[f64]) -> Result<Self, NnError> {
        let d = b.len();
        if a.len() != d * d {
            return Err(NnError::ShapeMismatch {
                expected: d * d,
                got: a.len(),
            });
        }
        let mut values = a.to_vec();
        values.extend_from_slice(b);
        Self::from_values(Layout::affine(d), values)
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Replace all values, keeping the layout. Rejects non-finite entries.
    pub fn set_values(&mut self, values: &[f64]) -> Result<(), NnError> {
        if values.len() != self.values.len() {
            return Err(NnError::ShapeMismatch {
                expected: self.values.len(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(NnError::NonFinite(format!("parameter {i}")));
        }
        self.values.copy_from_slice(values);
        Ok(())
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_matches_layout_blocks() {
        let spec = NetSpec::new(2, 8).with_freqs(3).with_embed_width(5);
        let p = ParamVector::init(&spec, 1).unwrap();
        // embed: 5*6+5; layer0: 8*2+8 + 2*8*5 + 8; layer1: 8*8+8 + 88; layer2: 2*8+2 + 2*2*5+2
        let expected = 35 + (24 + 88) + (72 + 88) + (18 + 22);
        assert_eq!(p.len(), expected);
        let (_, offs) = p.layout().offsets();
        let last = offs.last().unwrap();
        assert_eq!(last.gate.unwrap().2 + 2 * 5, p.len());
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let spec = NetSpec::new(1, 16);
        let p = ParamVector::init(&spec, 7).unwrap();
        assert!(p.max_abs() <= 1.0);
        assert!(p.values().iter().all(|v| v.is_finite()));
        let q = ParamVector::init(&spec, 7).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn rejects_wrong_length_and_nan() {
        let layout = Layout::affine(2);
        assert!(ParamVector::from_values(layout.clone(), vec![0.0; 5]).is_err());
        let mut v = vec![0.0; 6];
        v[3] = f64::NAN;
        assert!(matches!(
            ParamVector::from_values(layout, v),
            Err(NnError::NonFinite(_))
        ));
    }
}

//! The transport field `F = f_theta - grad U` on a fixed time grid.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{FlowError, TimeGrid};
use crate::nn::{fill_probes, JetShape, JetWorkspace, ParamVector, ProbeConfig, TimeFeatures};
use crate::train::Potential;

/// Derivatives of `F` at one point, from a second-order jet.
#[derive(Clone, Debug, Default)]
pub struct PointEval {
    /// Network output `f_theta`.
    pub f: Vec<f64>,
    /// `F = f_theta - grad U`.
    pub big_f: Vec<f64>,
    /// Row-major Jacobian of `F`.
    pub jac: Vec<f64>,
    /// `grad (div F)`.
    pub gdiv: Vec<f64>,
    pub div: f64,
}

impl PointEval {
    pub fn zeros(d: usize) -> Self {
        Self {
            f: vec![0.0; d],
            big_f: vec![0.0; d],
            jac: vec![0.0; d * d],
            gdiv: vec![0.0; d],
            div: 0.0,
        }
    }
}

/// Scratch buffers for field evaluations.
#[derive(Clone, Debug, Default)]
pub struct FieldWorkspace {
    pub jet: JetWorkspace,
    pub(crate) unit: Vec<f64>,
}

impl FieldWorkspace {
    pub fn new(d: usize) -> Self {
        let mut unit = vec![0.0; d * d];
        for i in 0..d {
            unit[i * d + i] = 1.0;
        }
        Self {
            jet: JetWorkspace::new(),
            unit,
        }
    }
}

/// Network, optional prior potential and cached time features on the
/// half-step grid `t_i = i dt / 2`, `i = 0..=2 steps`.
pub struct FlowField<'a> {
    net: &'a ParamVector,
    prior: Option<&'a Potential>,
    grid: TimeGrid,
    times: Vec<TimeFeatures>,
}

/// Probe directions for sample `index`: an independent ChaCha stream per
/// sample, so results do not depend on batch scheduling.
pub fn sample_probes(cfg: &ProbeConfig, dim: usize, index: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    fill_probes(&mut rng, cfg.dist, cfg.count * dim)
}

impl<'a> FlowField<'a> {
    pub fn new(
        net: &'a ParamVector,
        prior: Option<&'a Potential>,
        grid: TimeGrid,
    ) -> Result<Self, FlowError> {
        grid.validate()?;
        if let Some(p) = prior {
            if p.dim() != net.dim() {
                return Err(FlowError::DimMismatch {
                    expected: p.dim(),
                    got: net.dim(),
                });
            }
        }
        let times = (0..=2 * grid.steps)
            .map(|i| net.time_features(grid.half(i)))
            .collect();
        Ok(Self {
            net,
            prior,
            grid,
            times,
        })
    }

    pub fn dim(&self) -> usize {
        self.net.dim()
    }

    pub fn net(&self) -> &ParamVector {
        self.net
    }

    pub fn prior(&self) -> Option<&Potential> {
        self.prior
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn features(&self, half: usize) -> &TimeFeatures {
        &self.times[half]
    }

    pub fn workspace(&self) -> FieldWorkspace {
        FieldWorkspace::new(self.dim())
    }

    /// `F(z, t_half)`.
    pub fn value(&self, z: &[f64], half: usize, ws: &mut FieldWorkspace, out: &mut [f64]) {
        self.net
            .jet_forward(&self.times[half], z, &[], JetShape::VALUE, &mut ws.jet);
        out.copy_from_slice(ws.jet.output());
        if let Some(p) = self.prior {
            let g = p.gradient(z);
            out.iter_mut().zip(g).for_each(|(o, gi)| *o -= gi);
        }
    }

    /// `F` and `div F` at grid time `half`. With `probes` (row-major,
    /// `K x d`) the divergence of the network is the Hutchinson average.
    pub fn value_div(
        &self,
        z: &[f64],
        half: usize,
        probes: Option<&[f64]>,
        ws: &mut FieldWorkspace,
        out: &mut [f64],
    ) -> f64 {
        let d = self.dim();
        let (dirs, k) = match probes {
            Some(p) => (p, p.len() / d),
            None => (&ws.unit[..], d),
        };
        let shape = JetShape::first(k);
        self.net
            .jet_forward(&self.times[half], z, dirs, shape, &mut ws.jet);
        let nc = shape.ncomp();
        let o = ws.jet.output();
        let mut div = 0.0;
        for i in 0..d {
            out[i] = o[i * nc];
        }
        match probes {
            None => {
                for i in 0..d {
                    div += o[i * nc + 1 + i];
                }
            }
            Some(p) => {
                for a in 0..k {
                    for i in 0..d {
                        div += p[a * d + i] * o[i * nc + 1 + a];
                    }
                }
                div /= k as f64;
            }
        }
        if let Some(p) = self.prior {
            let pd = p.derivs(z);
            for i in 0..d {
                out[i] -= pd.grad[i];
            }
            div -= pd.laplacian();
        }
        div
    }

    /// Value, Jacobian, divergence and gradient of the divergence of `F`.
    pub fn second(&self, z: &[f64], half: usize, ws: &mut FieldWorkspace, out: &mut PointEval) {
        let d = self.dim();
        let shape = JetShape::second(d);
        self.net
            .jet_forward(&self.times[half], z, &ws.unit, shape, &mut ws.jet);
        let nc = shape.ncomp();
        let o = ws.jet.output();
        out.div = 0.0;
        for i in 0..d {
            out.f[i] = o[i * nc];
            out.big_f[i] = o[i * nc];
            for a in 0..d {
                out.jac[i * d + a] = o[i * nc + 1 + a];
            }
            out.div += o[i * nc + 1 + i];
        }
        for a in 0..d {
            out.gdiv[a] = (0..d).map(|i| o[i * nc + shape.pair_index(a, i)]).sum();
        }
        if let Some(p) = self.prior {
            let pd = p.derivs(z);
            let gl = pd.grad_laplacian();
            for i in 0..d {
                out.big_f[i] -= pd.grad[i];
                for a in 0..d {
                    out.jac[i * d + a] -= pd.hess[i * d + a];
                }
                out.gdiv[i] -= gl[i];
            }
            out.div -= pd.laplacian();
        }
    }

    /// `F(z, t)` at an arbitrary time, computing the time features on the fly.
    pub fn value_at(&self, z: &[f64], t: f64, ws: &mut FieldWorkspace, out: &mut [f64]) {
        let tf = self.net.time_features(t);
        self.net
            .jet_forward(&tf, z, &[], JetShape::VALUE, &mut ws.jet);
        out.copy_from_slice(ws.jet.output());
        if let Some(p) = self.prior {
            let g = p.gradient(z);
            out.iter_mut().zip(g).for_each(|(o, gi)| *o -= gi);
        }
    }
}

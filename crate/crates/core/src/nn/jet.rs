//! Truncated Taylor jets through the field network.
//!
//! A jet carries, for every hidden unit, its value, its directional
//! derivatives along a set of seed directions `v_1..v_m` in input space, and
//! (optionally) the second directional derivatives `D_{v_a} D_{v_b}` for
//! `a <= b`. Linear layers act on each component independently; the only
//! nonlinear map is `tanh`, whose jet rule is
//!
//! ```text
//! y   = tanh(p)
//! y_a = s1 p_a
//! y_ab = s1 p_ab + s2 p_a p_b,    s1 = 1 - y^2,  s2 = -2 y s1
//! ```
//!
//! With unit seed directions this yields the Jacobian and every second
//! partial derivative of the field in one pass. [`ParamVector::jet_backward`]
//! is the reverse-mode adjoint of the same pass and returns parameter
//! gradients plus the gradient with respect to the input point, which needs
//! the third derivative of `tanh` when second-order components carry
//! cotangent.

use super::params::ParamVector;
use super::time::{TimeCotangent, TimeFeatures};

/// Which derivative components a jet carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct JetShape {
    pub dirs: usize,
    pub second: bool,
}

impl JetShape {
    pub const VALUE: JetShape = JetShape {
        dirs: 0,
        second: false,
    };

    pub fn first(dirs: usize) -> Self {
        Self {
            dirs,
            second: false,
        }
    }

    pub fn second(dirs: usize) -> Self {
        Self { dirs, second: true }
    }

    pub fn ncomp(&self) -> usize {
        1 + self.dirs + if self.second { self.pairs() } else { 0 }
    }

    pub fn pairs(&self) -> usize {
        self.dirs * (self.dirs + 1) / 2
    }

    /// Component index of `D_{v_a} D_{v_b}`.
    pub fn pair_index(&self, a: usize, b: usize) -> usize {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        1 + self.dirs + a * self.dirs - a * (a.saturating_sub(1)) / 2 - a + b
    }
}

/// Reusable buffers for one forward/backward pass.
#[derive(Clone, Debug, Default)]
pub struct JetWorkspace {
    shape: Option<JetShape>,
    pairs: Vec<(usize, usize)>,
    xs: Vec<Vec<f64>>,
    ps: Vec<Vec<f64>>,
    ys: Vec<Vec<f64>>,
    out: Vec<f64>,
    bar: Vec<f64>,
    bar_next: Vec<f64>,
    local: Vec<f64>,
}

impl JetWorkspace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Output jet of the last forward pass, `dim x ncomp`, unit-major.
    pub fn output(&self) -> &[f64] {
        &self.out
    }

    pub fn shape(&self) -> JetShape {
        self.shape.unwrap_or(JetShape::VALUE)
    }

    fn prepare(&mut self, shape: JetShape, nlayers: usize) {
        if self.shape != Some(shape) {
            self.pairs.clear();
            for a in 0..shape.dirs {
                for b in a..shape.dirs {
                    self.pairs.push((a, b));
                }
            }
            self.shape = Some(shape);
        }
        if self.xs.len() != nlayers {
            self.xs = vec![Vec::new(); nlayers];
            self.ps = vec![Vec::new(); nlayers];
            self.ys = vec![Vec::new(); nlayers];
        }
    }
}

impl ParamVector {
    /// Propagate a jet seeded at `z` with directions `dirs` (row-major,
    /// `shape.dirs x dim`). The result is left in `ws.output()`.
    pub fn jet_forward(
        &self,
        tf: &TimeFeatures,
        z: &[f64],
        dirs: &[f64],
        shape: JetShape,
        ws: &mut JetWorkspace,
    ) {
        let d = self.dim();
        debug_assert_eq!(z.len(), d);
        debug_assert_eq!(dirs.len(), shape.dirs * d);
        let layout = self.layout();
        let nl = layout.layers.len();
        ws.prepare(shape, nl);
        let nc = shape.ncomp();
        let v = self.values();

        let mut input = std::mem::take(&mut ws.xs[0]);
        input.clear();
        input.resize(d * nc, 0.0);
        for i in 0..d {
            input[i * nc] = z[i];
            for a in 0..shape.dirs {
                input[i * nc + 1 + a] = dirs[a * d + i];
            }
        }

        for (l, (desc, off)) in layout.layers.iter().zip(&self.layer_off).enumerate() {
            let (n_in, n_out) = (desc.input, desc.output);
            let mut p = std::mem::take(&mut ws.ps[l]);
            p.clear();
            p.resize(n_out * nc, 0.0);
            for j in 0..n_out {
                let row = &v[off.w + j * n_in..off.w + (j + 1) * n_in];
                let pj = &mut p[j * nc..(j + 1) * nc];
                for (i, w) in row.iter().enumerate() {
                    let xi = &input[i * nc..(i + 1) * nc];
                    for (pc, xc) in pj.iter_mut().zip(xi) {
                        *pc += w * xc;
                    }
                }
                pj[0] += v[off.b + j];
            }
            let hidden = l + 1 < nl;
            let mut y = std::mem::take(&mut ws.ys[l]);
            y.clear();
            if hidden {
                y.resize(n_out * nc, 0.0);
                for j in 0..n_out {
                    let pj = &p[j * nc..(j + 1) * nc];
                    let yj = &mut y[j * nc..(j + 1) * nc];
                    let y0 = pj[0].tanh();
                    let s1 = 1.0 - y0 * y0;
                    let s2 = -2.0 * y0 * s1;
                    yj[0] = y0;
                    for a in 0..shape.dirs {
                        yj[1 + a] = s1 * pj[1 + a];
                    }
                    if shape.second {
                        for (q, &(a, b)) in ws.pairs.iter().enumerate() {
                            let c = 1 + shape.dirs + q;
                            yj[c] = s1 * pj[c] + s2 * pj[1 + a] * pj[1 + b];
                        }
                    }
                }
            } else {
                y.extend_from_slice(&p);
            }
            let mut out = if hidden {
                std::mem::take(&mut ws.xs[l + 1])
            } else {
                std::mem::take(&mut ws.out)
            };
            out.clear();
            if off.gate.is_some() {
                let g = &tf.gates[l];
                let s = &tf.shifts[l];
                for j in 0..n_out {
                    let start = out.len();
                    out.extend(y[j * nc..(j + 1) * nc].iter().map(|yc| yc * g[j]));
                    out[start] += s[j];
                }
            } else {
                out.extend_from_slice(&y);
            }
            ws.xs[l] = input;
            ws.ps[l] = p;
            ws.ys[l] = y;
            input = out;
        }
        ws.out = input;
    }

    /// Reverse pass for the most recent [`ParamVector::jet_forward`] on `ws`.
    ///
    /// `out_bar` is the cotangent of the output jet (same layout as
    /// `ws.output()`). Parameter gradients are added into `grad`, time-feature
    /// cotangents into `tcot`; the return value is the gradient with respect
    /// to the seed point `z`.
    pub fn jet_backward(
        &self,
        tf: &TimeFeatures,
        ws: &mut JetWorkspace,
        out_bar: &[f64],
        grad: &mut [f64],
        tcot: &mut TimeCotangent,
    ) -> Vec<f64> {
        let shape = ws.shape();
        let nc = shape.ncomp();
        let layout = self.layout();
        let nl = layout.layers.len();
        let v = self.values();
        let mut bar = std::mem::take(&mut ws.bar);
        bar.clear();
        bar.extend_from_slice(out_bar);
        let mut next = std::mem::take(&mut ws.bar_next);

        for l in (0..nl).rev() {
            let desc = layout.layers[l];
            let off = self.layer_off[l];
            let (n_in, n_out) = (desc.input, desc.output);
            let x = &ws.xs[l];
            let p = &ws.ps[l];
            let y = &ws.ys[l];
            // gate/shift
            if off.gate.is_some() {
                let g = &tf.gates[l];
                let gc = &mut tcot.gates[l];
                let sc = &mut tcot.shifts[l];
                for j in 0..n_out {
                    let bj = &mut bar[j * nc..(j + 1) * nc];
                    let yj = &y[j * nc..(j + 1) * nc];
                    sc[j] += bj[0];
                    let mut acc = 0.0;
                    for (b, yc) in bj.iter_mut().zip(yj) {
                        acc += *b * yc;
                        *b *= g[j];
                    }
                    gc[j] += acc;
                }
            }
            // activation
            if l + 1 < nl {
                let mut pb = std::mem::take(&mut ws.local);
                pb.clear();
                pb.resize(nc, 0.0);
                for j in 0..n_out {
                    let pj = &p[j * nc..(j + 1) * nc];
                    let y0 = y[j * nc];
                    let s1 = 1.0 - y0 * y0;
                    let s2 = -2.0 * y0 * s1;
                    let bj = &mut bar[j * nc..(j + 1) * nc];
                    pb[0] = bj[0] * s1;
                    for a in 0..shape.dirs {
                        pb[0] += bj[1 + a] * pj[1 + a] * s2;
                        pb[1 + a] = bj[1 + a] * s1;
                    }
                    if shape.second {
                        let s3 = -2.0 * s1 * s1 + 4.0 * y0 * y0 * s1;
                        for (q, &(a, b)) in ws.pairs.iter().enumerate() {
                            let c = 1 + shape.dirs + q;
                            let yb = bj[c];
                            pb[0] += yb * (s2 * pj[c] + s3 * pj[1 + a] * pj[1 + b]);
                            pb[1 + a] += yb * s2 * pj[1 + b];
                            pb[1 + b] += yb * s2 * pj[1 + a];
                            pb[c] = yb * s1;
                        }
                    }
                    bj.copy_from_slice(&pb);
                }
                ws.local = pb;
            }
            // linear
            next.clear();
            next.resize(n_in * nc, 0.0);
            for j in 0..n_out {
                let bj = &bar[j * nc..(j + 1) * nc];
                grad[off.b + j] += bj[0];
                let row = off.w + j * n_in;
                for i in 0..n_in {
                    let xi = &x[i * nc..(i + 1) * nc];
                    let w = v[row + i];
                    let ni = &mut next[i * nc..(i + 1) * nc];
                    let mut gw = 0.0;
                    for c in 0..nc {
                        gw += bj[c] * xi[c];
                        ni[c] += w * bj[c];
                    }
                    grad[row + i] += gw;
                }
            }
            std::mem::swap(&mut bar, &mut next);
        }
        let d = self.dim();
        let z_bar = (0..d).map(|i| bar[i * nc]).collect();
        ws.bar = bar;
        ws.bar_next = next;
        z_bar
    }
}

use std::fmt::Write as _;
use std::path::Path;

use super::{ScoreError, ScoreMode};
use crate::nn::{JetShape, JetWorkspace, ParamVector};
use crate::util::fmt_real;

/// Field, score and drift at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftPoint {
    pub f: Vec<f64>,
    pub s: Vec<f64>,
    pub u: Vec<f64>,
}

/// `u = f + sigma^2 s` from a field network and a score network, or `u`
/// directly from a drift network.
#[derive(Clone, Debug)]
pub struct RecoveredDrift {
    pub f: ParamVector,
    pub net: ParamVector,
    pub sigma: f64,
    pub mode: ScoreMode,
}

pub fn recover_drift(
    f_params: &ParamVector,
    s_params: &ParamVector,
    sigma: f64,
    mode: ScoreMode,
) -> Result<RecoveredDrift, ScoreError> {
    if f_params.dim() != s_params.dim() {
        return Err(ScoreError::InvalidConfig(format!(
            "field net has dimension {}, second net {}",
            f_params.dim(),
            s_params.dim()
        )));
    }
    if mode == ScoreMode::ParameterizeDrift && !(sigma > 0.0) {
        return Err(ScoreError::InvalidConfig(
            "sigma = 0 divides by zero in parameterize_drift mode; use parameterize_score".into(),
        ));
    }
    Ok(RecoveredDrift {
        f: f_params.clone(),
        net: s_params.clone(),
        sigma,
        mode,
    })
}

fn value(p: &ParamVector, x: &[f64], t: f64, ws: &mut JetWorkspace) -> Vec<f64> {
    let tf = p.time_features(t);
    p.jet_forward(&tf, x, &[], JetShape::VALUE, ws);
    ws.output().to_vec()
}

impl RecoveredDrift {
    pub fn dim(&self) -> usize {
        self.f.dim()
    }

    pub fn eval(&self, x: &[f64], t: f64) -> DriftPoint {
        let mut ws = JetWorkspace::new();
        let f = value(&self.f, x, t, &mut ws);
        let g = value(&self.net, x, t, &mut ws);
        let s2 = self.sigma * self.sigma;
        match self.mode {
            ScoreMode::ParameterizeScore => {
                let u = f.iter().zip(&g).map(|(f, s)| f + s2 * s).collect();
                DriftPoint { f, s: g, u }
            }
            ScoreMode::ParameterizeDrift => {
                let s = g.iter().zip(&f).map(|(u, f)| (u - f) / s2).collect();
                DriftPoint { f, s, u: g }
            }
        }
    }

    pub fn drift(&self, x: &[f64], t: f64) -> Vec<f64> {
        self.eval(x, t).u
    }
}

/// One row per (time, point): `t, x, f, s, u`, with `_i` suffixes in more
/// than one dimension.
pub fn write_drift_csv(
    path: &Path,
    drift: &RecoveredDrift,
    points: &[f64],
    times: &[f64],
) -> Result<(), ScoreError> {
    let d = drift.dim();
    if points.len() % d != 0 {
        return Err(ScoreError::InvalidConfig(
            "point list does not match the dimension".into(),
        ));
    }
    let cols = |name: &str| -> Vec<String> {
        if d == 1 {
            vec![name.to_string()]
        } else {
            (1..=d).map(|i| format!("{name}_{i}")).collect()
        }
    };
    let mut header = vec!["t".to_string()];
    for n in ["x", "f", "s", "u"] {
        header.extend(cols(n));
    }
    let mut out = header.join(",");
    out.push('\n');
    for &t in times {
        for x in points.chunks(d) {
            let e = drift.eval(x, t);
            let mut row = vec![fmt_real(t)];
            for v in x.iter().chain(&e.f).chain(&e.s).chain(&e.u) {
                row.push(fmt_real(*v));
            }
            let _ = writeln!(out, "{}", row.join(","));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

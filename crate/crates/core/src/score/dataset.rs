use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::ScoreError;
use crate::flow::{generative_path, FlowField, TimeGrid};
use crate::nn::ParamVector;
use crate::train::{Potential, TerminalSpec};
use crate::util::run_indexed;

/// Points visited by generated paths, each tagged with its node index.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    pub dim: usize,
    pub grid: TimeGrid,
    /// Row-major `len x dim`.
    pub points: Vec<f64>,
    pub nodes: Vec<usize>,
    pub seed: u64,
    /// Paths discarded because they left the finite range.
    pub dropped: usize,
}

impl TrajectoryDataset {
    /// Dataset from explicit points; every node index must lie on `grid`.
    pub fn from_points(
        dim: usize,
        grid: TimeGrid,
        points: Vec<f64>,
        nodes: Vec<usize>,
    ) -> Result<Self, ScoreError> {
        if dim == 0 || points.len() != nodes.len() * dim {
            return Err(ScoreError::InvalidConfig(format!(
                "{} coordinates for {} points of dimension {dim}",
                points.len(),
                nodes.len()
            )));
        }
        if nodes.iter().any(|&k| k > grid.steps) {
            return Err(ScoreError::InvalidConfig(
                "node index beyond the grid".into(),
            ));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(ScoreError::InvalidConfig("non-finite dataset point".into()));
        }
        Ok(Self {
            dim,
            grid,
            points,
            nodes,
            seed: 0,
            dropped: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn time(&self, i: usize) -> f64 {
        self.grid.node(self.nodes[i])
    }

    /// Rows `idx` as a new dataset on the same grid.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut points = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            points.extend_from_slice(self.point(i));
        }
        Self {
            dim: self.dim,
            grid: self.grid,
            points,
            nodes: idx.iter().map(|&i| self.nodes[i]).collect(),
            seed: self.seed,
            dropped: self.dropped,
        }
    }
}

/// Draw `n_paths` terminal points (standard normal unless `terminal` is
/// given), integrate `dz/dt = f - grad U` backward to 0 and keep every node.
/// Paths that become non-finite are dropped and counted.
pub fn generate_trajectory_dataset(
    f_params: &ParamVector,
    prior: Option<&Potential>,
    terminal: Option<&TerminalSpec>,
    n_paths: usize,
    grid: TimeGrid,
    seed: u64,
    workers: usize,
) -> Result<TrajectoryDataset, ScoreError> {
    let d = f_params.dim();
    if let Some(t) = terminal {
        if t.mean.len() != d || t.var.len() != d || t.var.iter().any(|v| !(*v > 0.0)) {
            return Err(ScoreError::InvalidConfig(
                "terminal Gaussian does not fit the net".into(),
            ));
        }
    }
    let field = FlowField::new(f_params, prior, grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z1 = Vec::with_capacity(n_paths * d);
    for _ in 0..n_paths {
        for i in 0..d {
            let e: f64 = rng.sample(StandardNormal);
            z1.push(match terminal {
                Some(t) => t.mean[i] + t.var[i].sqrt() * e,
                None => e,
            });
        }
    }
    let paths = run_indexed(
        n_paths,
        workers,
        || (field.workspace(), Vec::new()),
        |b, (ws, nodes)| {
            generative_path(&field, &z1[b * d..(b + 1) * d], ws, nodes)
                .ok()
                .map(|_| nodes.clone())
        },
    );
    let n = grid.steps;
    let mut points = Vec::with_capacity(n_paths * (n + 1) * d);
    let mut idx = Vec::with_capacity(n_paths * (n + 1));
    let mut dropped = 0;
    for p in paths {
        match p {
            Some(p) => {
                points.extend_from_slice(&p);
                idx.extend(0..=n);
            }
            None => dropped += 1,
        }
    }
    Ok(TrajectoryDataset {
        dim: d,
        grid,
        points,
        nodes: idx,
        seed,
        dropped,
    })
}

//! Experiment configuration: a preset per experiment, overridden key by key
//! from a TOML file.

use std::path::{Path, PathBuf};

use sbp_core::density::Mixture1d;
use sbp_core::grid::{sample_density, GridSpec};
use sbp_core::nn::NetSpec;
use sbp_core::score::ScoreMatchConfig;
use sbp_core::train::{double_well_potential, Potential, SamplerKind, TerminalSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Gmm1d,
    Moons,
    EightGaussians,
    Checkerboard,
    DoubleWell,
    IdentitySanity,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::Gmm1d,
        Experiment::Moons,
        Experiment::EightGaussians,
        Experiment::Checkerboard,
        Experiment::DoubleWell,
        Experiment::IdentitySanity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Gmm1d => "gmm1d",
            Experiment::Moons => "moons",
            Experiment::EightGaussians => "eight_gaussians",
            Experiment::Checkerboard => "checkerboard",
            Experiment::DoubleWell => "double_well",
            Experiment::IdentitySanity => "identity_sanity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == s)
    }

    pub fn dim(self) -> usize {
        match self {
            Experiment::Gmm1d | Experiment::IdentitySanity => 1,
            _ => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Track {
    Neural,
    Grid,
    Both,
}

/// Endpoint density for the grid track, sampled at cell centres and
/// normalized to unit mass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DensitySpec {
    GaussianMixture1d,
    Gaussian { mean: Vec<f64>, var: Vec<f64> },
    /// Constant on the grid domain.
    Uniform,
}

impl DensitySpec {
    pub fn dim(&self) -> Option<usize> {
        match self {
            DensitySpec::GaussianMixture1d => Some(1),
            DensitySpec::Gaussian { mean, .. } => Some(mean.len()),
            DensitySpec::Uniform => None,
        }
    }

    /// Unnormalized value at `x`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            DensitySpec::GaussianMixture1d => Mixture1d::symmetric_pair().pdf(x[0]),
            DensitySpec::Gaussian { mean, var } => {
                let q: f64 = x
                    .iter()
                    .zip(mean.iter().zip(var))
                    .map(|(xi, (m, v))| (xi - m).powi(2) / v)
                    .sum();
                (-0.5 * q).exp()
            }
            DensitySpec::Uniform => 1.0,
        }
    }

    pub fn sample_on(&self, spec: &GridSpec) -> Vec<f64> {
        sample_density(spec, |x| self.eval(x))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub nx: usize,
    pub nt: usize,
    pub lo: f64,
    pub hi: f64,
    pub horizon: f64,
    /// Defaults to `train.sigma`.
    pub sigma: Option<f64>,
    pub step_scale: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub rho0: Option<DensitySpec>,
    pub rho1: Option<DensitySpec>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            nx: 128,
            nt: 64,
            lo: -6.0,
            hi: 6.0,
            horizon: 1.0,
            sigma: None,
            step_scale: 0.005,
            max_iter: 60_000,
            tol: 2e-4,
            rho0: None,
            rho1: None,
        }
    }
}

impl GridSection {
    pub fn spec(&self, dim: usize, default_sigma: f64) -> GridSpec {
        let mut s = GridSpec::new(
            dim,
            self.nx,
            self.nt,
            self.lo,
            self.hi,
            self.sigma.unwrap_or(default_sigma),
        );
        s.horizon = self.horizon;
        s.step_scale = self.step_scale;
        s.max_iter = self.max_iter;
        s.tol = self.tol;
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Alpha,
    Sigma,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: SweepParam,
    pub values: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
}

fn default_seeds() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    /// Forward samples used for the terminal histogram and energy distance.
    pub n: usize,
    /// ODE paths written to the trajectory CSVs.
    pub trajectories: usize,
    pub sde_paths: usize,
    /// Euler-Maruyama steps on `[0, horizon]`.
    pub sde_steps: usize,
    pub bins: usize,
    pub disk_radius: f64,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            n: 10_000,
            trajectories: 200,
            sde_paths: 1000,
            sde_steps: 100,
            bins: 60,
            disk_radius: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub window: [f64; 2],
    /// Points per axis when neither side is a grid.
    pub points: usize,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            window: [-3.0, 3.0],
            points: 121,
        }
    }
}

/// Sub-seed tags, mixed into the master seed.
#[derive(Clone, Copy, Debug)]
pub enum SeedTag {
    Init = 1,
    Data = 2,
    ScoreInit = 3,
    Paths = 4,
    Eval = 5,
    Sample = 6,
    Sde = 7,
    Target = 8,
}

/// splitmix64 finalizer of `master + tag * golden`, cut to 63 bits so the
/// echoed config stays valid TOML.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    let mut z = master.wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    (z ^ (z >> 31)) >> 1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub track: Track,
    /// Master seed; every other seed is derived from it.
    pub seed: u64,
    pub workers: usize,
    /// Offset `a` of the double-well barrier.
    pub barrier_offset: f64,
    /// Samples for the final KL and objective estimates.
    pub eval_samples: usize,
    pub out: Option<PathBuf>,
    pub train: TrainConfig,
    pub grid: GridSection,
    pub score: ScoreMatchConfig,
    pub sweep: Option<SweepSpec>,
    pub sample: SampleSection,
    pub compare: CompareSection,
}

impl ExperimentConfig {
    pub fn preset(experiment: Experiment) -> Self {
        let dim = experiment.dim();
        let mut train = TrainConfig {
            alpha: 10.0,
            sigma: 1.0,
            steps: 20,
            batch_size: 512,
            iterations: 3000,
            net: NetSpec::new(dim, 16),
            ..TrainConfig::default()
        };
        let mut score = ScoreMatchConfig {
            net: NetSpec::new(dim, 32),
            ..ScoreMatchConfig::default()
        };
        let mut grid = GridSection::default();
        let mut track = Track::Neural;
        match experiment {
            Experiment::Gmm1d => {
                track = Track::Both;
                grid.rho0 = Some(DensitySpec::GaussianMixture1d);
                grid.rho1 = Some(DensitySpec::Gaussian {
                    mean: vec![0.0],
                    var: vec![1.0],
                });
            }
            Experiment::IdentitySanity => {
                track = Track::Both;
                train.alpha = 100.0;
                train.batch_size = 256;
                train.iterations = 400;
                let g = DensitySpec::Gaussian {
                    mean: vec![0.0],
                    var: vec![1.0],
                };
                grid.rho0 = Some(g.clone());
                grid.rho1 = Some(g);
            }
            Experiment::Moons | Experiment::EightGaussians | Experiment::Checkerboard => {
                train.sigma = 0.1;
                train.net = NetSpec::new(2, 32);
                grid.lo = -4.0;
                grid.hi = 4.0;
            }
            Experiment::DoubleWell => {
                train.sigma = 0.1;
                train.batch_size = 256;
                train.iterations = 1000;
                train.net = NetSpec::new(2, 32);
                train.terminal = Some(TerminalSpec {
                    mean: vec![1.0, 0.0],
                    var: vec![0.0125, 0.15],
                });
                grid.lo = -2.0;
                grid.hi = 2.0;
            }
        }
        score.sigma = train.sigma;
        let mut cfg = Self {
            experiment,
            track,
            seed: 0,
            workers: 1,
            barrier_offset: 0.5,
            eval_samples: 20_000,
            out: None,
            train,
            grid,
            score,
            sweep: None,
            sample: SampleSection::default(),
            compare: CompareSection::default(),
        };
        cfg.derive_seeds();
        cfg
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Preset for the named experiment with the file's keys merged on top.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let user: toml::Table = text
            .parse()
            .map_err(|e| CliError::Config(format!("invalid TOML: {e}")))?;
        let experiment = match user.get("experiment") {
            None => return bad("experiment: missing field".into()),
            Some(toml::Value::String(s)) => match Experiment::parse(s) {
                Some(e) => e,
                None => {
                    let names: Vec<_> = Experiment::ALL.iter().map(|e| e.name()).collect();
                    return bad(format!(
                        "experiment: unknown value `{s}`, expected one of {}",
                        names.join(", ")
                    ));
                }
            },
            Some(_) => return bad("experiment: expected a string".into()),
        };
        let given_seed = |section: &str| {
            user.get(section)
                .and_then(|t| t.get("seed"))
                .map(|v| v.as_integer())
        };
        let given = [given_seed("train"), given_seed("score")];
        if let Some(g) = user.get("grid") {
            match (g.get("rho0").is_some(), g.get("rho1").is_some()) {
                (true, false) => return bad("grid.rho1: missing ρ₁ density".into()),
                (false, true) => return bad("grid.rho0: missing ρ₀ density".into()),
                _ => {}
            }
        }
        let mut merged = toml::Value::try_from(Self::preset(experiment))
            .map_err(|e| CliError::Config(format!("preset: {e}")))?;
        merge(&mut merged, toml::Value::Table(user));
        let mut cfg: Self = merged
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        cfg.derive_seeds();
        // sub-seeds may appear (as in an echoed config) only with their
        // derived values
        let derived = [cfg.train.seed, cfg.score.seed];
        for ((section, g), want) in ["train", "score"].iter().zip(given).zip(derived) {
            if let Some(v) = g {
                if v != Some(want as i64) {
                    return bad(format!(
                        "{section}.seed: derived from the top-level seed (would be {want}); set `seed` instead"
                    ));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.derive_seeds();
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self.train.workers = workers;
        self.score.workers = workers;
        self
    }

    /// Seeds of the sub-configs follow the master seed; `sigma` and the
    /// horizon of the score stage follow the training run.
    fn derive_seeds(&mut self) {
        self.train.seed = self.sub_seed(SeedTag::Init);
        self.score.seed = self.sub_seed(SeedTag::ScoreInit);
        self.score.sigma = self.train.sigma;
        self.score.horizon = self.train.horizon;
        self.train.workers = self.workers;
        self.score.workers = self.workers;
    }

    pub fn sub_seed(&self, tag: SeedTag) -> u64 {
        derive_seed(self.seed, tag as u64)
    }

    pub fn dim(&self) -> usize {
        self.experiment.dim()
    }

    pub fn sampler_kind(&self) -> SamplerKind {
        match self.experiment {
            Experiment::Gmm1d => SamplerKind::GaussianMixture1d,
            Experiment::Moons => SamplerKind::Moons,
            Experiment::EightGaussians => SamplerKind::EightGaussians,
            Experiment::Checkerboard => SamplerKind::Checkerboard,
            Experiment::DoubleWell => SamplerKind::Gaussian {
                mean: vec![-1.0, 0.0],
                var: vec![0.0125, 0.15],
            },
            Experiment::IdentitySanity => SamplerKind::Gaussian {
                mean: vec![0.0],
                var: vec![1.0],
            },
        }
    }

    pub fn prior(&self) -> Option<Potential> {
        (self.experiment == Experiment::DoubleWell)
            .then(|| double_well_potential(self.barrier_offset))
    }

    pub fn grid_spec(&self) -> GridSpec {
        self.grid.spec(self.dim(), self.train.sigma)
    }

    /// Endpoint densities sampled on the grid, or a config error when the
    /// experiment has none.
    pub fn grid_densities(&self, spec: &GridSpec) -> Result<(Vec<f64>, Vec<f64>), CliError> {
        if self.prior().is_some() {
            return Err(CliError::Config(format!(
                "grid track: {} has a prior potential, which the grid solver does not model",
                self.experiment.name()
            )));
        }
        let rho0 = self
            .grid
            .rho0
            .as_ref()
            .ok_or_else(|| CliError::Config("grid.rho0: missing ρ₀ density".into()))?;
        let rho1 = self
            .grid
            .rho1
            .as_ref()
            .ok_or_else(|| CliError::Config("grid.rho1: missing ρ₁ density".into()))?;
        for (name, r) in [("rho0", rho0), ("rho1", rho1)] {
            if let Some(d) = r.dim() {
                if d != spec.dim {
                    return Err(CliError::Config(format!(
                        "grid.{name}: dimension {d} does not match the grid dimension {}",
                        spec.dim
                    )));
                }
            }
        }
        Ok((rho0.sample_on(spec), rho1.sample_on(spec)))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let dim = self.dim();
        self.train.validate()?;
        self.score.validate()?;
        if self.train.net.dim != dim {
            return bad(format!(
                "train.net.dim: {} does not match {} (dimension {dim})",
                self.train.net.dim,
                self.experiment.name()
            ));
        }
        if self.score.net.dim != dim {
            return bad(format!(
                "score.net.dim: {} does not match {} (dimension {dim})",
                self.score.net.dim,
                self.experiment.name()
            ));
        }
        if self.workers == 0 {
            return bad("workers: must be at least 1".into());
        }
        if self.eval_samples < 2 {
            return bad("eval_samples: need at least 2".into());
        }
        if !self.barrier_offset.is_finite() {
            return bad("barrier_offset: must be finite".into());
        }
        let spec = self.grid_spec();
        spec.validate()?;
        if self.track != Track::Neural {
            self.grid_densities(&spec)?;
        }
        let [lo, hi] = self.compare.window;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return bad(format!("compare.window: need lo < hi, got [{lo}, {hi}]"));
        }
        if self.compare.points < 2 {
            return bad("compare.points: need at least 2".into());
        }
        let s = &self.sample;
        if s.n < 2 || s.bins == 0 || s.sde_steps == 0 || !(s.disk_radius > 0.0) {
            return bad("sample: need n >= 2, bins, sde_steps and disk_radius positive".into());
        }
        if let Some(sw) = &self.sweep {
            if sw.values.is_empty() {
                return bad("sweep.values: empty sweep list".into());
            }
            if sw.seeds == 0 {
                return bad("sweep.seeds: must be at least 1".into());
            }
            let ok = |v: f64| match sw.parameter {
                SweepParam::Alpha => v > 0.0 && v.is_finite(),
                SweepParam::Sigma => v >= 0.0 && v.is_finite(),
            };
            if let Some(v) = sw.values.iter().find(|v| !ok(**v)) {
                return bad(format!("sweep.values: {v} is out of range"));
            }
        }
        Ok(())
    }

    /// Resolved config as TOML, echoed into every run directory.
    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Io(format!("config echo: {e}")))
    }
}

/// Recursive table merge; values from `over` win.
fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

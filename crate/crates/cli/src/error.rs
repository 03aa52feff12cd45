use sbp_core::flow::FlowError;
use sbp_core::grid::GridError;
use sbp_core::nn::NnError;
use sbp_core::score::ScoreError;
use sbp_core::train::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(String),
}

impl CliError {
    /// 2 for configuration problems, 3 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(m) => CliError::Config(format!("train: {m}")),
            TrainError::Flow(f) => f.into(),
            TrainError::Nn(n) => n.into(),
            TrainError::Io(e) => e.into(),
            e @ (TrainError::NonFinite { .. } | TrainError::Diverged { .. }) => {
                CliError::Numerical(e.to_string())
            }
        }
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        match e {
            ScoreError::InvalidConfig(m) => CliError::Config(format!("score: {m}")),
            ScoreError::EmptyDataset => CliError::Numerical(e.to_string()),
            ScoreError::Diverged { .. } => CliError::Numerical(e.to_string()),
            ScoreError::Flow(f) => f.into(),
            ScoreError::Nn(n) => n.into(),
            ScoreError::Io(e) => e.into(),
        }
    }
}

impl From<GridError> for CliError {
    fn from(e: GridError) -> Self {
        match e {
            GridError::Io(e) => e.into(),
            GridError::NonFinite(_) | GridError::DegenerateCubic(_) => CliError::Numerical(e.to_string()),
            other => CliError::Config(format!("grid: {other}")),
        }
    }
}

impl From<FlowError> for CliError {
    fn from(e: FlowError) -> Self {
        match e {
            FlowError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            FlowError::Io(e) => e.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::NonFinite(_) => CliError::Numerical(e.to_string()),
            NnError::Checkpoint(m) => CliError::Io(format!("checkpoint: {m}")),
            other => CliError::Config(other.to_string()),
        }
    }
}

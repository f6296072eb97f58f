use thiserror::Error;

use crate::expcli::config::ConfigError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("graph is disconnected")]
    Disconnected,
    #[error("random graph still disconnected after {0} attempts")]
    DisconnectedAfterRetries(usize),
    #[error("matrix is not doubly stochastic (max deviation {0:e})")]
    NotDoublyStochastic(f64),
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("oracle has no closed-form inner solution")]
    NotAnalytic,
    #[error("node {0} has an empty train or validation set")]
    EmptyPartition(usize),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsupported label set {0:?}")]
    UnsupportedLabelSet(Vec<String>),
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
    #[error("step size {name} = {value} outside {range}")]
    StepSizeOutOfRange {
        name: &'static str,
        value: f64,
        range: String,
    },
    #[error("gamma = {0} outside (0, 1]")]
    GammaOutOfRange(f64),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("invalid run configuration: {0}")]
    ConfigInvalid(String),
    #[error("divergence at round {round}: node {node} {quantity} has norm {norm:e}")]
    DivergenceDetected {
        round: usize,
        node: usize,
        quantity: &'static str,
        norm: f64,
    },
    #[error("constant {name} must be positive, got {value}")]
    NonpositiveConstant { name: &'static str, value: f64 },
    #[error("inner solver failed: {0}")]
    InnerSolverFailed(String),
    #[error("infeasible schedule: {name} lower bound {lower:e} is not below cap {cap:e}")]
    InfeasibleSchedule {
        name: &'static str,
        lower: f64,
        cap: f64,
    },
    #[error("column {0} missing from trace")]
    ColumnMissing(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DivergenceDetected { .. } => 2,
            Error::Io { .. } => 3,
            _ => 1,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the identification pipeline.
#[derive(Debug, Error)]
pub enum GridError {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid branch {from}-{to}: {reason}")]
    InvalidBranch {
        from: usize,
        to: usize,
        reason: String,
    },

    #[error("duplicate branch between buses {0} and {1}")]
    DuplicateBranch(usize, usize),

    #[error("network is not connected: bus {0} is unreachable from bus 1")]
    Disconnected(usize),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: String, actual: String },

    #[error("power flow diverged after {iterations} iterations (mismatch norm {residual:.3e})")]
    Divergence { iterations: usize, residual: f64 },

    #[error("power flow failed at sample {sample}: {source}")]
    SampleDivergence {
        sample: usize,
        #[source]
        source: Box<GridError>,
    },

    #[error("zero voltage magnitude at sample {sample}, bus {bus}")]
    SingularDivision { sample: usize, bus: usize },

    #[error("voltage matrix is rank deficient: rank {rank} < {expected} (grid not observable)")]
    RankDeficient { rank: usize, expected: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Process exit status for configuration and input errors.
pub const EXIT_CONFIG: i32 = 2;
/// Process exit status for numerical and observability failures.
pub const EXIT_NUMERICAL: i32 = 3;
/// Process exit status for file-system failures.
pub const EXIT_IO: i32 = 4;

impl GridError {
    /// Exit status of the command-line tool for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            GridError::Io { .. } => EXIT_IO,
            GridError::Parse { .. }
            | GridError::InvalidNetwork(_)
            | GridError::InvalidBranch { .. }
            | GridError::DuplicateBranch(..)
            | GridError::Disconnected(_)
            | GridError::Dimension { .. }
            | GridError::Config(_) => EXIT_CONFIG,
            GridError::Divergence { .. }
            | GridError::SampleDivergence { .. }
            | GridError::SingularDivision { .. }
            | GridError::RankDeficient { .. }
            | GridError::Numerical(_)
            | GridError::UndefinedMetric(_) => EXIT_NUMERICAL,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GridError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dimension(expected: impl ToString, actual: impl ToString) -> Self {
        GridError::Dimension {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, GridError>;

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised anywhere in the forecasting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("ingestion error at row {row}, column {column}: {message}")]
    Ingestion {
        row: usize,
        column: String,
        message: String,
    },

    #[error("ordering error: period {label:?} at row {row} does not follow the previous period")]
    Ordering { row: usize, label: String },

    #[error("degenerate column {series:?}: zero sample variance")]
    DegenerateColumn { series: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("solver did not converge after {iterations} iterations (remaining gap {gap:.3e})")]
    NonConvergence { iterations: usize, gap: f64 },

    #[error("eigensolver failed on a {dim}x{dim} matrix (condition estimate {condition:.3e})")]
    Eigen { dim: usize, condition: f64 },

    #[error("zero dispersion: {0}")]
    ZeroDispersion(String),

    #[error("incomplete records: {0}")]
    Incomplete(String),

    #[error("{module}: {source}")]
    Context {
        module: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("forecast origin {origin}: {source}")]
    Origin {
        origin: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn context(self, module: &'static str) -> Error {
        Error::Context {
            module,
            source: Box::new(self),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Context { source, .. } | Error::Origin { source, .. } => source.exit_code(),
            Error::Config(_) | Error::Dimension(_) => 2,
            Error::Ingestion { .. }
            | Error::Ordering { .. }
            | Error::DegenerateColumn { .. }
            | Error::InsufficientData(_)
            | Error::Alignment(_)
            | Error::Incomplete(_)
            | Error::Io { .. }
            | Error::Csv(_) => 3,
            Error::SingularDesign(_)
            | Error::NonConvergence { .. }
            | Error::Eigen { .. }
            | Error::ZeroDispersion(_) => 4,
        }
    }
}

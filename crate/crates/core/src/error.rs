use std::path::PathBuf;

/// Errors produced by model loading, fitting, simulation and scenario handling.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// A robot description or scenario file failed to parse or validate.
    #[error("{file}:{line}: {message}")]
    Description {
        file: String,
        line: usize,
        message: String,
    },

    /// A scenario field failed validation; `path` is the dotted field path.
    #[error("invalid scenario field `{path}`: {message}")]
    Validation { path: String, message: String },

    #[error(
        "rank-deficient polynomial fit for muscle {muscle}: rank {rank} < {monomials} monomials \
         ({samples} samples); increase samples per joint or lower the degree"
    )]
    RankDeficient {
        muscle: usize,
        rank: usize,
        monomials: usize,
        samples: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("covariance lost positive definiteness")]
    NotPositiveDefinite,

    /// The closed loop produced a non-finite state. `dump` holds the last trace rows as CSV.
    #[error("simulation diverged at t = {time:.3} s: {reason}\n{dump}")]
    Diverged {
        time: f64,
        reason: String,
        dump: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input (files, fields, preconditions)
    /// rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Description { .. }
                | Error::Validation { .. }
                | Error::InvalidModel(_)
                | Error::DimensionMismatch { .. }
                | Error::InvalidInput(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

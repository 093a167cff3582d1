use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: header is missing required column(s): {missing:?}")]
    MissingColumns { path: PathBuf, missing: Vec<String> },

    #[error("{path}: conflicting mappings: {details}")]
    MappingConflict { path: PathBuf, details: String },

    #[error("{path}: line {line}: {reason}")]
    BadRecord {
        path: PathBuf,
        line: u64,
        reason: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("eigensolver did not converge: {0}")]
    Eigen(String),

    #[error("not enough phenotypes: found {found} after exclusions, need {needed}")]
    TooFewPhenotypes { found: usize, needed: usize },

    #[error("degenerate contingency table: {0}")]
    Degenerate(String),

    #[error("design matrix is rank deficient; collinear column(s): {0:?}")]
    Collinear(Vec<String>),

    #[error("multinomial fit did not converge after {iterations} iterations (gradient inf-norm {gradient_norm:e})")]
    NoConvergence {
        iterations: usize,
        gradient_norm: f64,
    },

    #[error("separation detected: coefficient {name} = {value:.3}; penalized fits are not supported")]
    Separation { name: String, value: f64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not symmetric (relative asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("Cholesky factorization failed after {attempts} attempts (last jitter {last_jitter:e})")]
    FactorizationFailure { attempts: usize, last_jitter: f64 },

    #[error("non-finite loss encountered")]
    NonFiniteLoss,

    #[error("non-finite gradient encountered")]
    NonFiniteGradient,

    #[error("invalid label {label} (expected an integer in [0, {classes}))")]
    InvalidLabel { label: f64, classes: usize },

    #[error("latent projection has not been fitted")]
    ProjectionNotFitted,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("dataset is empty or too small")]
    EmptyDataset,

    #[error("unknown reproduce case '{0}'")]
    UnknownCase(String),

    #[error("invalid configuration for '{field}': {message}")]
    Config { field: String, message: String },

    #[error("malformed model file: {0}")]
    ModelFormat(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn dims(message: impl Into<String>) -> Self {
        Error::DimensionMismatch(message.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

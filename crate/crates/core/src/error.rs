use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical instability: {0}")]
    NumericalInstability(String),

    /// The hyperbolic distance is not differentiable where both arguments coincide.
    #[error("distance gradient undefined for coincident points")]
    ZeroDistanceGradient,

    #[error("unsupported dimension {got}: expected {expected}")]
    UnsupportedDimension { expected: usize, got: usize },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { expected: u32, found: u32 },

    #[error("training diverged at epoch {epoch}, step {step}: {term} is not finite")]
    Diverged {
        epoch: usize,
        step: usize,
        term: String,
        /// Parameters from the last step whose loss was finite.
        last_good: Box<crate::training::ModelParams>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io { .. } | Error::Diverged { .. } | Error::NumericalInstability(_)
        )
    }
}

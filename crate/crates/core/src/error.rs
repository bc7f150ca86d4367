use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SomoError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SomoError {
    #[error("dimension error in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SomoError {
    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        SomoError::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SomoError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (config, files, shapes)
    /// rather than a failure while computing.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            SomoError::Dimension { .. }
                | SomoError::Config(_)
                | SomoError::Input(_)
                | SomoError::Validation(_)
                | SomoError::Parse { .. }
                | SomoError::Checkpoint(_)
        )
    }
}

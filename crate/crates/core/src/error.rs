use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value violates a documented precondition or invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// The basis family has a positive-measure set on which every unit is flat.
    #[error(
        "basis family is not qualified on [{lo}, {hi}]: plateau_fraction = {plateau_fraction} \
         (all unit derivatives vanish on a set of positive measure)"
    )]
    Qualification {
        lo: f64,
        hi: f64,
        plateau_fraction: f64,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

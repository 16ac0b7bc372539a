use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid numeric value: {0}")]
    InvalidNumeric(String),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },

    #[error("degenerate trajectory: {0}")]
    DegenerateTrajectory(String),

    #[error("degenerate basis: {0}")]
    DegenerateBasis(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("did not converge: {0}")]
    Convergence(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerics (divergence, NaN, degenerate geometry)
    /// rather than by configuration or I/O.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::InvalidNumeric(_)
                | Error::Divergence { .. }
                | Error::DegenerateTrajectory(_)
                | Error::DegenerateBasis(_)
                | Error::Convergence(_)
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Format { .. })
    }
}

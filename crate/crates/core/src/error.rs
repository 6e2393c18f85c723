use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SdeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SdeError {
    #[error("non-finite input: {0}")]
    NonFiniteInput(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("partition times must increase: {0}")]
    Ordering(String),

    #[error("non-finite state produced{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    Overflow { step: Option<usize> },

    #[error("implicit solve did not converge after {iterations} iterations")]
    SolverDiverged { iterations: usize },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("no time left to step (remaining {remaining:e})")]
    ZeroStep { remaining: f64 },

    #[error("step cap of {cap} exceeded before reaching the horizon")]
    Runaway { cap: usize },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("normalising constant is zero")]
    DegenerateNormalizer,

    #[error("{failures} of {samples} samples failed (more than 1%)")]
    TooManyFailures { failures: usize, samples: usize },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl SdeError {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        SdeError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

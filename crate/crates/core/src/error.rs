use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("covariance of cluster {cluster} is not symmetric positive definite")]
    SingularCovariance { cluster: usize },

    #[error("degenerate sensing footprint: fov {theta} rad must lie in (0, pi/2)")]
    DegenerateFootprint { theta: f64 },

    #[error("non-finite model parameters")]
    NonFinite,

    #[error("corrupt payload: {0}")]
    CorruptPayload(String),

    #[error("trajectory infeasible: {0}")]
    Infeasible(String),

    #[error("instance too large for exhaustive search: {0}")]
    OversizedInstance(String),

    #[error("config file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("failed to parse {}: {source}", path.display())]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("{variant} seed {seed} round {round}: {source}")]
    Run {
        variant: String,
        seed: u64,
        round: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::InvalidConfig(_)
                | Error::MissingFile(_)
                | Error::Parse { .. }
                | Error::OversizedInstance(_)
        )
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

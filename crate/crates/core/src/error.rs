use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = TomoError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TomoError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// The ket family does not span the space, so no complete POVM exists.
    #[error("degenerate measurement: frame operator has rank {rank} < {dim}")]
    DegenerateMeasurement { rank: usize, dim: usize },

    #[error("singular statistics: outcome {outcome} has probability {probability:e}")]
    SingularStatistics { outcome: usize, probability: f64 },

    #[error("informationally incomplete: Fisher matrix is singular")]
    InformationallyIncomplete,

    #[error("degenerate projection: no positive eigenvalue to renormalize")]
    DegenerateProjection,

    #[error(
        "sampling exhausted after {attempts} attempts; inverse condition numbers seen in [{min_seen:.6}, {max_seen:.6}]"
    )]
    SamplingExhausted {
        attempts: usize,
        min_seen: f64,
        max_seen: f64,
    },

    #[error("trial {trial} failed: {source}")]
    TrialFailed {
        trial: usize,
        #[source]
        source: Box<TomoError>,
    },

    #[error("{failed} of {trials} trials failed (limit is 1%); first failure: {first}")]
    TooManyFailures {
        failed: usize,
        trials: usize,
        first: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TomoError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        TomoError::InvalidInput(msg.into())
    }

    /// True for the failure kinds a Monte Carlo run may skip and count.
    pub fn is_degenerate(&self) -> bool {
        match self {
            TomoError::DegenerateMeasurement { .. }
            | TomoError::SingularStatistics { .. }
            | TomoError::DegenerateProjection
            | TomoError::InformationallyIncomplete
            | TomoError::NumericalFailure(_) => true,
            TomoError::TrialFailed { source, .. } => source.is_degenerate(),
            _ => false,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while building or running a simulation.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("event {event} scheduled at t={at} which is before the current time t={now}")]
    ScheduleInPast { event: String, at: f64, now: f64 },

    #[error("unknown resource `{0}`")]
    UnknownResource(String),

    #[error("duplicate resource `{0}`")]
    DuplicateResource(String),

    #[error("duplicate generator `{0}`")]
    DuplicateGenerator(String),

    #[error("trajectory `{trajectory}`: {reason}")]
    InvalidTrajectory { trajectory: String, reason: String },

    #[error("arrival `{arrival}` releases {amount} units of `{resource}` but holds {held}")]
    ReleaseExceedsHeld {
        arrival: String,
        resource: String,
        amount: u64,
        held: u64,
    },

    #[error("arrival `{arrival}` has no selected resource")]
    NothingSelected { arrival: String },

    #[error("invalid capacity {value} for resource `{resource}`")]
    InvalidCapacity { resource: String, value: f64 },

    #[error("invalid seize amount {value} for resource `{resource}`")]
    InvalidAmount { resource: String, value: f64 },

    #[error("unstable system: offered load {load} >= 1")]
    Unstable { load: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

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
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;

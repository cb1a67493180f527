use thiserror::Error;

use crate::liouvillian::Location;

/// Errors raised by model construction, schedule building and evolution.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    Model(String),

    #[error("size guard: {what} requires n <= {max}, got n = {n}")]
    SizeGuard { what: &'static str, n: usize, max: usize },

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(
        "time step too large: spawn probability {probability:.4} > 1 at location ({}, {}); reduce dt",
        location.row,
        location.col
    )]
    TimeStepTooLarge { location: Location, probability: f64 },

    #[error("time grid: {0}")]
    TimeGrid(String),

    #[error("mismatched populations: {0}")]
    Mismatch(String),

    #[error("degenerate confidence interval: need at least 2 values, got {0}")]
    DegenerateCi(usize),

    #[error("internal consistency: {0}")]
    Consistency(String),

    #[error("snapshot format: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code: 2 for invalid input, 3 for numerical guards.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::SizeGuard { .. }
            | Error::TimeStepTooLarge { .. }
            | Error::Consistency(_)
            | Error::DegenerateCi(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

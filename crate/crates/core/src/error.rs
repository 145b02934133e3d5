use thiserror::Error;

use crate::mdp::Violation;

/// Errors produced by the solver toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid MDP: {}", join(.0))]
    InvalidMdp(Vec<Violation>),

    #[error("invalid aggregation scheme: {}", .0.join("; "))]
    InvalidScheme(Vec<String>),

    #[error("invalid policy at state {state}: {reason}")]
    InvalidPolicy { state: usize, reason: String },

    #[error("action {action} is not available at state {state}")]
    InvalidAction { state: usize, action: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("aggregate {aggregate} mixes states with different action sets")]
    HeterogeneousActions { aggregate: usize },

    #[error("disaggregation row {aggregate} puts mass on unsampled state {state}")]
    MassOutsideSample { aggregate: usize, state: usize },

    #[error("linear system is singular: {0}")]
    SingularSystem(&'static str),

    #[error("requested {requested} sample states but the problem has only {n}")]
    TooManySamples { requested: usize, n: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

fn join(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}

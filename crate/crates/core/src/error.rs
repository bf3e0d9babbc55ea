use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by model construction and the filter recursions.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected:?}, got {got:?}")]
    Dimension {
        what: String,
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "multiplicative noise matrix F at k={k} is singular or ill-conditioned (cond {cond:e})"
    )]
    SingularNoiseMatrix { k: usize, cond: f64 },

    #[error("matrix {what} is not positive definite")]
    NotPositiveDefinite { what: String },

    #[error("innovation matrix of sensor {sensor} at k={k} is singular (cond estimate {cond:e})")]
    SingularInnovation { sensor: usize, k: usize, cond: f64 },

    #[error("inflated matrix on link ({i},{j}) is not positive definite")]
    InflatedNotPd { i: usize, j: usize },

    #[error("window candidate (neighbor {j}, slot {s}) is not positive definite")]
    CandidateNotPd { j: usize, s: usize },

    #[error("moment bound exceeded magnitude cap {cap:e} at k={k}")]
    Overflow { k: usize, cap: f64 },

    #[error("transition requested for j={j} < k={k}")]
    InvalidTransition { j: usize, k: usize },

    #[error("neighbor set of sensor {i} does not match the received pairs")]
    NeighborMismatch { i: usize },

    #[error("duplicate edge ({0},{1})")]
    MultiEdge(usize, usize),

    #[error("graph is invalid: {0}")]
    InvalidGraph(String),

    #[error("step k={k} failed for {} sensor(s); first: sensor {}: {}", .failures.len(), .failures[0].0, .failures[0].1)]
    Step {
        k: usize,
        failures: Vec<(usize, Box<Error>)>,
    },
}

pub type Result<T> = core::result::Result<T, Error>;

//! Crate-wide error type.
//!
//! Data-dependent failures (bad weights, infeasible configurations, exhausted
//! budgets) surface as `Error`. Violations of caller contracts (mismatched
//! domains handed to an error functional, draws from an empty range) panic
//! with a message instead; they are bugs, not runtime conditions.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain mismatch: {0}")]
    DomainMismatch(String),

    #[error("empty sample sequence")]
    EmptySample,

    #[error("weights must be nonnegative and sum to 1 within {tolerance}: got total {total}")]
    NotNormalized { total: f64, tolerance: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("correlated sampling exceeded the iteration cap of {cap}; the outcome space is infeasible for rejection sampling")]
    IterationCapExceeded { cap: u64 },

    #[error("outcome space has log2 cardinality {log2_card:.1}, above the configured limit {limit:.1}; raise the limit only for spaces you can afford to reject over")]
    SpaceTooLarge { log2_card: f64, limit: f64 },

    #[error("selection with delta = 0 is not supported here; use the pure mechanism")]
    ZeroDelta,

    #[error("local message length {got} does not match universe size {expected}")]
    MessageLength { got: usize, expected: usize },

    #[error("candidate set is empty: no hypothesis reached the tau*k1 appearance threshold; lower tau or raise the run counts")]
    EmptyCandidateSet,

    #[error("sampled hypothesis class is empty")]
    EmptyClass,

    #[error("statistical query budget of {budget} exceeded")]
    QueryBudgetExceeded { budget: usize },

    #[error("configuration rejected: {0}")]
    ConfigRejected(String),

    #[error("infeasible construction: {0}")]
    Infeasible(String),

    #[error("audit failed: {0}")]
    AuditFailed(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Errors raised by problem construction, the solvers and the reference oracle.
#[derive(Debug, Error)]
pub enum Error {
    #[error("action set is empty")]
    EmptyActionSet,

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("duplicate action at index {index} (same point as index {first})")]
    DuplicateAction { index: usize, first: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite value at candidate {candidate}: {what}")]
    NonFinite { candidate: usize, what: &'static str },

    #[error("problem has no constraints")]
    MissingConstraints,

    #[error("constrained problem requires a Slater point")]
    MissingSlaterPoint,

    #[error("Slater point is not strictly feasible: constraint {index} has value {value:e} (margin floor {floor:e})")]
    NotStrictlyFeasible {
        index: usize,
        value: f64,
        floor: f64,
    },

    #[error("Slater point is not in the convex hull of the action set: {0}")]
    NotInHull(String),

    #[error("oracle did not reach tolerance {requested:e} within {iterations} iterations (achieved {achieved:e})")]
    OracleDidNotConverge {
        requested: f64,
        achieved: f64,
        iterations: usize,
    },

    #[error("row {row} of the transition matrix is not a probability vector (sum {sum})")]
    NotStochastic { row: usize, sum: f64 },

    #[error("traces have unequal lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),

    #[error("arrival file: {0}")]
    ArrivalFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

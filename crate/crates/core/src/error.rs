use thiserror::Error;

/// Errors raised anywhere in the crate.
///
/// Variants split into input validation failures (bad matrices, malformed
/// CSV, out-of-range parameters) and numerical failures that indicate the
/// computation itself could not finish. [`Error::is_validation`] tells the
/// two apart so front ends can map them to distinct exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("network needs at least {min} agents, got {got}")]
    TooSmall { min: usize, got: usize },

    #[error("weight matrix is not square: row {row} has {len} entries, expected {n}")]
    NotSquare { row: usize, len: usize, n: usize },

    #[error("row {row} sums to {sum}, which is not stochastic")]
    NonStochasticRow { row: usize, sum: f64 },

    #[error("negative or non-finite weight {value} at ({row}, {col})")]
    NegativeWeight { row: usize, col: usize, value: f64 },

    #[error("weight {name} = {value} is outside its admissible range")]
    WeightOutOfRange { name: &'static str, value: f64 },

    #[error("every talkativeness value is zero")]
    AllZero,

    #[error("network is not ergodic (no unique aperiodic closed class)")]
    NotErgodic,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("input is empty")]
    EmptyInput,

    #[error("iteration did not converge within {iterations} steps")]
    NoConvergence { iterations: usize },

    #[error("value {value} for {name} is out of range")]
    OutOfRange { name: &'static str, value: f64 },

    #[error("group is degenerate: high estimate equals low mean")]
    DegenerateGroup,

    #[error("need at least {min} values, got {got}")]
    TooFew { min: usize, got: usize },

    #[error("input has zero variance")]
    ZeroVariance,

    #[error("perfect separation: coefficients diverge")]
    Separation,

    #[error("design matrix is rank deficient")]
    Singular,

    #[error("invalid distribution parameters: {0}")]
    BadDistributionParams(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("dataset invariant violated: {0}")]
    Invariant(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl Error {
    /// True for errors caused by caller-supplied input rather than by a
    /// numerical breakdown.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::NoConvergence { .. } | Error::Singular | Error::Separation
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

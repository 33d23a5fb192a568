use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}: row {row} sums to {sum} (expected 1 within 1e-9)")]
    NonStochasticRow { what: String, row: usize, sum: f64 },

    #[error("{what}: negative or non-finite entry {value} at row {row}, column {col}")]
    NegativeEntry { what: String, row: usize, col: usize, value: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("bad horizon: {0}")]
    BadHorizon(String),

    #[error("parse error at line {line}, column {column} (field `{path}`): {message}")]
    Parse { path: String, line: usize, column: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("encoder assignment has no image for support pair (x = {x}, belief = {belief:?})")]
    UncoveredSupportPair { x: usize, belief: Vec<f64> },

    #[error("search space exceeded: {what} needs {count} candidates, cap is {cap}")]
    SearchSpaceExceeded { what: String, count: u128, cap: u128 },

    #[error("information state is empty after dropping negligible atoms")]
    EmptyState,

    #[error("stationary closure exceeded cap of {cap} support pairs")]
    ClosureCapExceeded { cap: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Validation-class failures: malformed or inconsistent input data.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::NonStochasticRow { .. }
                | Error::NegativeEntry { .. }
                | Error::DimensionMismatch(_)
                | Error::BadHorizon(_)
                | Error::Parse { .. }
        )
    }
}

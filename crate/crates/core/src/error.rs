use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("invalid share vector: {0}")]
    InvalidShares(String),

    #[error("contraction did not converge after {iterations} iterations (last residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("degenerate share integral for product {product}: {value:e}")]
    DegenerateShare { product: usize, value: f64 },

    #[error("markup is singular for product {product}: own elasticity is zero")]
    SingularMarkup { product: usize },

    #[error("diversion ratio is singular for products ({j}, {k})")]
    SingularDiversion { j: usize, k: usize },

    #[error("self-normalized critical value infeasible: squared quantile {quantile_sq:.4} >= n = {n}")]
    InfeasibleSample { quantile_sq: f64, n: usize },

    #[error("dataset error at {location}: {reason}")]
    Data { location: String, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn data(location: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Data {
            location: location.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical kind (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. }
                | Error::DegenerateShare { .. }
                | Error::SingularMarkup { .. }
                | Error::SingularDiversion { .. }
                | Error::InfeasibleSample { .. }
        )
    }
}

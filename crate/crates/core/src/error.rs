use std::path::PathBuf;

/// Errors produced by the numerical routines and file readers in this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A matrix that must be symmetric is not.
    #[error("matrix is not symmetric (max |a_ij - a_ji| = {max_asymmetry:e})")]
    NotSymmetric { max_asymmetry: f64 },

    /// A matrix that must be positive semidefinite has a clearly negative eigenvalue.
    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    /// A count or size argument is outside its admissible range.
    #[error("invalid size: {0}")]
    Size(String),

    /// A value that must be finite is NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Malformed text input. `line` and `column` are 1-based; column 0 means the whole line.
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    /// Invalid parameter value (negative weight, zero bandwidth, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Standardization of a kernel would divide by a zero spread.
    #[error("pairwise kernel values have zero spread; cannot standardize")]
    ZeroSpread,

    /// Weights of a discrete measure do not sum to one.
    #[error("weights sum to {sum}, expected 1")]
    Normalization { sum: f64 },

    /// An iterative method exhausted its budget.
    #[error("{method} did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// Training produced a non-finite loss.
    #[error("loss became non-finite at iteration {iteration}")]
    Divergence { iteration: usize },

    /// Brute-force enumeration refused because the instance is too large.
    #[error("instance of size {size} exceeds the brute-force limit {limit}")]
    SizeLimit { size: usize, limit: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of a numerical method rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Convergence { .. }
                | Error::Divergence { .. }
                | Error::NotPsd { .. }
                | Error::ZeroSpread
                | Error::NonFinite(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

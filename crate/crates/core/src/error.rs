use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = TangleError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TangleError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("negative mixture weight {weight} for component `{component}`")]
    NegativeWeight { component: &'static str, weight: f64 },

    /// A matrix failed one of the density-matrix invariants.
    #[error("density matrix violates {invariant}: deviation {deviation:e}")]
    InvalidDensity {
        invariant: &'static str,
        deviation: f64,
    },

    #[error("{path}:{line}: {message}")]
    FileFormat {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Zero total weight or a zero-norm member state.
    #[error("degenerate decomposition: {0}")]
    Degenerate(&'static str),

    #[error("invalid engine configuration: {0}")]
    InvalidConfig(String),

    /// No visited decomposition reached the residual threshold.
    #[error("no feasible decomposition found (best residual {best_r2:e}, threshold {threshold:e})")]
    NoFeasiblePoint { best_r2: f64, threshold: f64 },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

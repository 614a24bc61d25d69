use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PlmError>;

#[derive(Debug, Error)]
pub enum PlmError {
    /// A point fell outside the kernel's domain `[0, 1]^q`.
    #[error("point {point:?} outside kernel domain [0,1]^{dim}")]
    Domain { point: Vec<f64>, dim: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Coordinate descent hit its sweep limit. Carries the last iterate.
    #[error("no convergence after {sweeps} sweeps (kkt residual {kkt_residual:.3e})")]
    Convergence {
        sweeps: usize,
        kkt_residual: f64,
        last_iterate: Vec<f64>,
    },

    #[error("degenerate nodewise column {column}: tau^2 = {tau2:.3e}")]
    DegenerateColumn { column: usize, tau2: f64 },

    #[error("tuning failed: {0}")]
    Tuning(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PlmError {
    /// Short stable code written into result rows for failed estimates.
    pub fn code(&self) -> &'static str {
        match self {
            PlmError::Domain { .. } => "domain",
            PlmError::Argument(_) => "argument",
            PlmError::Numeric(_) => "numeric",
            PlmError::Convergence { .. } => "convergence",
            PlmError::DegenerateColumn { .. } => "degenerate_column",
            PlmError::Tuning(_) => "tuning",
            PlmError::Config(_) => "config",
            PlmError::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PlmError::Io {
            path: path.into(),
            source,
        }
    }
}

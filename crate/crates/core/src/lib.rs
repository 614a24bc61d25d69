//! Divide-and-conquer estimation for sparse high-dimensional partially linear
//! models `Y = X beta* + f*(T) + eps`.
//!
//! Each machine fits a double-penalized (Lasso plus RKHS norm) estimator,
//! debiases it with a nodewise-regression inverse of the smoothed covariance,
//! and the debiased estimates are averaged.

pub mod datagen;
pub mod debias;
pub mod error;
pub mod experiment;
pub mod kernel;
pub mod lasso;
pub mod linalg;
pub mod metrics;
pub mod profiled_lasso;
pub mod tuning;

pub use datagen::{Dataset, Shard, SimDesign};
pub use debias::{aggregate, AggregateResult, NodewiseFit, ShardEstimate};
pub use error::{PlmError, Result};
pub use kernel::{KernelKind, KernelSpec};
pub use profiled_lasso::{LocalFit, PenaltyConfig, ProfiledSystem};
pub use tuning::{CvPlan, GridSpec};

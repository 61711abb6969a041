//! Bayesian estimation of the pooled graded response model and the ordinal
//! Thurstonian forced-choice model.

pub mod artifact;
pub mod diagnostics;
pub mod map;
pub mod model;
pub mod nuts;

use thiserror::Error;

pub use artifact::{FitArtifact, FitBackend};
pub use diagnostics::{ess_bulk, rhat, split_rhat, DiagnosticsError, ParamDiagnostics};
pub use map::{ascend, fit_map, MapFit, MapOptions, StartSummary};
pub use model::{
    evaluate, grad_log_posterior, log_posterior, log_posterior_grad, BlockDesign, Layout, LogDensityParts, Model,
    ModelData, ParamVector, StatementDesign, UnitMeta, TRAITS,
};
pub use nuts::{fit_hmc, HmcOptions, Posterior};

#[derive(Debug, Error)]
pub enum IrtError {
    #[error("no complete response units to fit")]
    EmptyData,
    #[error("parameter {index} is not finite")]
    NonFinite { index: usize },
    #[error("log posterior is not finite")]
    NonFiniteDensity,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid model design: {0}")]
    Design(String),
    #[error("optimizer failure: {0}")]
    Optimizer(String),
    #[error("sampler failure: {0}")]
    Sampler(String),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

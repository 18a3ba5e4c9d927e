//! Exact Gaussian-process regression with a shared ARD kernel across outputs.

mod kernel;
mod model;
mod optimize;

use thiserror::Error;

use crate::linalg::LinalgError;

pub use kernel::{kernel_eval, ArdRbf, Kernel, KernelParams};
pub use model::{
    log_marginal_likelihood, FitDiagnostics, GpConfig, GpModel, GpPrediction, InitialParams,
    ParamBounds, GP_FORMAT_VERSION,
};
pub use optimize::{minimize_bounded, LbfgsOptions, LbfgsResult};

#[derive(Debug, Error)]
pub enum GpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("need at least {needed} training rows, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("unsupported model format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },
    #[error("model snapshot: {0}")]
    Snapshot(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

//! Gaussian-process surrogates for three-phase unbalanced distribution power flow.
//!
//! The crate bundles everything needed to reproduce the surrogate benchmark:
//! a radial multiphase [`feeder`] model, a nonlinear [`powerflow`] oracle,
//! the [`lindistflow`] linearization, an exact multi-output [`gp`] regressor,
//! an [`mlp`] baseline, time-series [`scenario`] generation, error [`metrics`]
//! and the [`bench`] harness that ties them together.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the double-precision instantiations used by the CLI.

pub mod bench;
pub mod feeder;
pub mod gp;
pub mod lindistflow;
pub mod linalg;
pub mod metrics;
pub mod mlp;
pub mod normalize;
pub mod powerflow;
pub mod scalar;
pub mod scenario;

pub use scalar::Scalar;

pub type Feeder64 = feeder::Feeder<f64>;
pub type Dataset64 = scenario::Dataset<f64>;
pub type GpModel64 = gp::GpModel<f64>;
pub type GpModel32 = gp::GpModel<f32>;
pub type MlpModel64 = mlp::MlpModel<f64>;
pub type MlpModel32 = mlp::MlpModel<f32>;
pub type NetLoad64 = powerflow::NetLoadVector<f64>;

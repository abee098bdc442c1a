//! Parallel trends g-formula estimation for sustained treatment regimes.

pub mod agg;
pub mod bootstrap;
pub mod dgp;
pub mod estimators;
pub mod glm;
pub mod linalg;
pub mod oracle;
pub mod panel;
pub mod rng;
pub mod scalar;
pub mod sensitivity;
pub mod stats;
pub mod study;

pub use scalar::Real;

pub type Panel = panel::LongPanel<f64>;
pub type PsiEstimate = estimators::PsiEstimate<f64>;
pub type FitResult = glm::FitResult<f64>;
pub type Matrix = linalg::Matrix<f64>;
pub type Workspace<'a> = estimators::Workspace<'a, f64>;

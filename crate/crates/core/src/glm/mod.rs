//! Weighted GLM fitting by IRLS, with declarative design matrices.

mod design;
mod irls;
mod spec;
mod spline;

pub(crate) use design::CompiledDesign;
pub use design::{build_design, build_design_rows};
pub use irls::{fit_glm, fit_glm_with, fit_logit_intercept, predict, FitOptions, FitResult, FitWarning, Scale, WlsFactor};
pub use spec::{Family, Link, ModelSpec, Term};
pub use spline::NaturalSpline;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlmError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("unknown covariate {0:?}")]
    UnknownCovariate(String),
    #[error("lag {lag} of {name:?} is not available at time {time}")]
    InvalidLag { name: String, lag: usize, time: usize },
    #[error("log of non-positive {name:?} (unit {unit}, time {time})")]
    NonPositiveLog { name: String, unit: String, time: usize },
    #[error("design is rank deficient (rank {rank} of {columns} columns)")]
    RankDeficient { rank: usize, columns: usize },
    #[error("IRLS did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no rows to fit")]
    EmptyData,
    #[error("{0}")]
    NonFinite(String),
}

//! Sensitivity analysis for departures from parallel trends.
//!
//! A user-supplied offset `Δ(w̄_m, k)` is added to `Y_k` in the `(k, k)`
//! cells only: `Y_k + Σ_{m=1}^k Δ(W̄_m, k)`. The `(k-1, k)` cells keep the
//! raw `Y_{k-1}`. Offsets act on the modelling scale (rates for count
//! panels). TMLE bounds are recomputed from the offset outcome column.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bootstrap::{resample, BootstrapConfig, BootstrapError};
use crate::estimators::{psi_with_outcomes, EstimationError, EstimationSpecs, EstimatorKind, PsiEstimate, Workspace};
use crate::panel::{LongPanel, Regime};
use crate::stats::{normal_quantile, std_dev};
use crate::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum DeltaSpec {
    /// `Δ(·, k) = value`.
    Constant { value: f64 },
    /// `Δ(·, k) = values[k]`.
    TimeVarying { values: Vec<f64> },
    /// `Δ(w̄_m, k) = intercept[k] + Σ_c coefficients[c][k] · W_{c,m}`.
    CovariateLinear {
        #[serde(default)]
        intercept: Vec<f64>,
        coefficients: BTreeMap<String, Vec<f64>>,
    },
    /// `Δ(w̄_m, k) = table[k][bin]`, where the bin of `W_m` is the number of
    /// `breaks` it is greater than or equal to.
    Tabulated { covariate: String, breaks: Vec<f64>, table: Vec<Vec<f64>> },
}

impl DeltaSpec {
    pub fn zero() -> Self {
        Self::Constant { value: 0.0 }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Constant { value } => format!("constant({value})"),
            Self::TimeVarying { values } => format!("time_varying({values:?})"),
            Self::CovariateLinear { coefficients, .. } => {
                format!("covariate_linear({})", coefficients.keys().cloned().collect::<Vec<_>>().join(","))
            }
            Self::Tabulated { covariate, .. } => format!("tabulated({covariate})"),
        }
    }

    /// `Δ(w̄_m, k)` for one unit.
    pub fn evaluate<T: Real>(&self, panel: &LongPanel<T>, unit: usize, m: usize, k: usize) -> Result<f64, SensitivityError> {
        let not_eval = |reason: String| SensitivityError::DeltaNotEvaluable { unit: panel.unit_ids()[unit].clone(), time: k, reason };
        let at = |v: &[f64], what: &str| v.get(k).copied().ok_or_else(|| not_eval(format!("{what} has no entry for time {k}")));
        let cov = |name: &str| -> Result<f64, SensitivityError> {
            let c = panel.covariate_index(name).ok_or_else(|| not_eval(format!("unknown covariate {name:?}")))?;
            Ok(panel.covariate(unit, m, c).as_f64())
        };
        let v = match self {
            Self::Constant { value } => *value,
            Self::TimeVarying { values } => at(values, "values")?,
            Self::CovariateLinear { intercept, coefficients } => {
                let mut v = if intercept.is_empty() { 0.0 } else { at(intercept, "intercept")? };
                for (name, coef) in coefficients {
                    v += at(coef, name)? * cov(name)?;
                }
                v
            }
            Self::Tabulated { covariate, breaks, table } => {
                let x = cov(covariate)?;
                let bin = breaks.iter().filter(|&&b| x >= b).count();
                let row = table.get(k).ok_or_else(|| not_eval(format!("table has no row for time {k}")))?;
                *row.get(bin).ok_or_else(|| not_eval(format!("table row {k} has no bin {bin}")))?
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(not_eval("offset is not finite".into()))
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensitivityError {
    #[error("offset not evaluable for unit {unit} at time {time}: {reason}")]
    DeltaNotEvaluable { unit: String, time: usize, reason: String },
    #[error("outcome index j={j} must be k or k-1 for k={k}")]
    InvalidCell { j: usize, k: usize },
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Bootstrap(#[from] BootstrapError),
}

impl SensitivityError {
    pub fn is_numerical(&self) -> bool {
        match self {
            Self::Estimation(e) => e.is_numerical(),
            Self::Bootstrap(e) => e.is_numerical(),
            _ => false,
        }
    }
}

/// Per-unit `Σ_{m=1}^k Δ(W̄_m, k)`.
pub fn delta_offset<T: Real>(panel: &LongPanel<T>, delta: &DeltaSpec, k: usize) -> Result<Vec<T>, SensitivityError> {
    (0..panel.n_units())
        .map(|i| {
            let mut s = 0.0;
            for m in 1..=k {
                s += delta.evaluate(panel, i, m, k)?;
            }
            Ok(T::lit(s))
        })
        .collect()
}

/// Outcome column for cell `(j, k)`: offset `Y_k` when `j = k`, raw
/// `Y_{k-1}` when `j = k - 1`.
pub fn apply_delta<T: Real>(panel: &LongPanel<T>, delta: &DeltaSpec, j: usize, k: usize) -> Result<Vec<T>, SensitivityError> {
    if k >= panel.n_times() {
        return Err(EstimationError::TimeOutOfRange { t: k, n_times: panel.n_times() }.into());
    }
    let y = panel.response_column(j);
    if j + 1 == k {
        Ok(y)
    } else if j == k {
        Ok(y.into_iter().zip(delta_offset(panel, delta, k)?).map(|(a, b)| a + b).collect())
    } else {
        Err(SensitivityError::InvalidCell { j, k })
    }
}

/// `ψ̂'_t` for one offset on a prepared workspace.
pub fn psi_prime<T: Real>(ws: &Workspace<'_, T>, kind: EstimatorKind, delta: &DeltaSpec, t: usize) -> Result<PsiEstimate<T>, SensitivityError> {
    let panel = ws.panel();
    let offsets: Vec<Vec<T>> = (0..=t).map(|k| delta_offset(panel, delta, k)).collect::<Result<_, _>>()?;
    let outcome = |j: usize, k: usize| -> Result<Vec<T>, EstimationError> {
        let y = ws.response(j);
        Ok(if j == k { y.into_iter().zip(&offsets[k]).map(|(a, &b)| a + b).collect() } else { y })
    };
    Ok(psi_with_outcomes(ws, kind, t, &outcome)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub index: usize,
    pub label: String,
    pub estimator: EstimatorKind,
    pub psi_prime: f64,
    pub contrast: f64,
    pub contrast_se: Option<f64>,
    pub contrast_ci: Option<(f64, f64)>,
}

/// One row per grid point and estimator, in grid order. Treatment models
/// and outcome designs are fit once and shared by every grid point.
pub fn sensitivity_sweep<T: Real>(
    panel: &LongPanel<T>,
    regime: &Regime,
    kinds: &[EstimatorKind],
    specs: &EstimationSpecs,
    grid: &[DeltaSpec],
    t: usize,
) -> Result<Vec<SensitivityRow>, SensitivityError> {
    let ws = Workspace::new(panel, regime, specs, kinds, t)?;
    let rows: Vec<Vec<SensitivityRow>> = grid
        .par_iter()
        .enumerate()
        .map(|(index, delta)| {
            kinds
                .iter()
                .map(|&kind| {
                    let est = psi_prime(&ws, kind, delta, t)?;
                    Ok(SensitivityRow {
                        index,
                        label: delta.label(),
                        estimator: kind,
                        psi_prime: est.psi[t].as_f64(),
                        contrast: est.contrast[t].as_f64(),
                        contrast_se: None,
                        contrast_ci: None,
                    })
                })
                .collect::<Result<Vec<_>, SensitivityError>>()
        })
        .collect::<Result<_, _>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// The sweep with bootstrap standard errors and Wald intervals for each
/// contrast. Every replicate reruns the whole grid on one resampled panel.
pub fn sensitivity_sweep_bootstrap(
    panel: &LongPanel<f64>,
    regime: &Regime,
    kinds: &[EstimatorKind],
    specs: &EstimationSpecs,
    grid: &[DeltaSpec],
    t: usize,
    config: &BootstrapConfig,
) -> Result<Vec<SensitivityRow>, SensitivityError> {
    let mut rows = sensitivity_sweep(panel, regime, kinds, specs, grid, t)?;
    if config.replicates < 2 {
        return Err(BootstrapError::InvalidConfig("at least 2 replicates are needed".into()).into());
    }
    let draws: Vec<Option<Vec<f64>>> = (0..config.replicates)
        .into_par_iter()
        .map(|b| -> Result<Option<Vec<f64>>, SensitivityError> {
            let rep = resample(panel, config.mode, config.seed, b)?;
            Ok(sensitivity_sweep(&rep, regime, kinds, specs, grid, t).ok().map(|r| r.iter().map(|x| x.contrast).collect()))
        })
        .collect::<Result<_, _>>()?;
    let ok: Vec<&Vec<f64>> = draws.iter().flatten().collect();
    let failed = config.replicates - ok.len();
    if failed as f64 > crate::bootstrap::MAX_FAILED_FRACTION * config.replicates as f64 || ok.len() < 2 {
        return Err(BootstrapError::TooManyFailedReplicates { failed, replicates: config.replicates }.into());
    }
    let z = normal_quantile(0.5 + config.level / 2.0);
    for (i, row) in rows.iter_mut().enumerate() {
        let se = std_dev(&ok.iter().map(|d| d[i]).collect::<Vec<_>>());
        row.contrast_se = Some(se);
        row.contrast_ci = Some((row.contrast - z * se, row.contrast + z * se));
    }
    Ok(rows)
}

/// First row, in grid order, whose contrast interval contains zero.
pub fn breakeven(rows: &[SensitivityRow], kind: EstimatorKind) -> Option<&SensitivityRow> {
    rows.iter().filter(|r| r.estimator == kind).find(|r| r.contrast_ci.is_some_and(|(lo, hi)| lo <= 0.0 && 0.0 <= hi))
}

/// Constant offsets `start, start + step, ...` (`count` points).
pub fn constant_grid(start: f64, step: f64, count: usize) -> Vec<DeltaSpec> {
    (0..count).map(|i| DeltaSpec::Constant { value: start + step * i as f64 }).collect()
}

pub fn grid_from_json(text: &str) -> Result<Vec<DeltaSpec>, serde_json::Error> {
    serde_json::from_str(text)
}

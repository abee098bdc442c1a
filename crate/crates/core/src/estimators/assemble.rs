use serde::{Deserialize, Serialize};

use super::{Averaging, EstimationError, EstimatorKind, EstimatorWarning, TmleStep, Truncation};
use crate::panel::LongPanel;
use crate::scalar::Real;

/// Estimated cells `φ_{k,k}` and `φ_{k-1,k}` for `k = 0..=t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PhiTable<T> {
    pub estimator: EstimatorKind,
    same: Vec<Option<T>>,
    prev: Vec<Option<T>>,
}

impl<T: Real> PhiTable<T> {
    pub fn new(estimator: EstimatorKind, t: usize) -> Self {
        Self { estimator, same: vec![None; t + 1], prev: vec![None; t + 1] }
    }

    pub fn t(&self) -> usize {
        self.same.len() - 1
    }

    /// Sets `φ_{j,k}`; `j` must be `k` or `k - 1`.
    pub fn set(&mut self, j: usize, k: usize, value: T) {
        if j == k {
            self.same[k] = Some(value);
        } else {
            assert_eq!(j + 1, k, "phi cell needs j in {{k-1, k}}");
            self.prev[k] = Some(value);
        }
    }

    pub fn get(&self, j: usize, k: usize) -> Option<T> {
        if k > self.t() {
            None
        } else if j == k {
            self.same[k]
        } else if j + 1 == k {
            self.prev[k]
        } else {
            None
        }
    }

    /// Cells required for `ψ_t` that are absent.
    pub fn missing(&self, t: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for k in 0..=t {
            if self.get(k, k).is_none() {
                out.push((k, k));
            }
            if k > 0 && self.get(k - 1, k).is_none() {
                out.push((k - 1, k));
            }
        }
        out
    }
}

/// `ψ̂_t` trajectory with the natural course and optional bootstrap columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PsiEstimate<T> {
    pub estimator: EstimatorKind,
    pub psi: Vec<T>,
    pub natural_course: Vec<T>,
    pub contrast: Vec<T>,
    pub se: Option<Vec<T>>,
    pub ci_lo: Option<Vec<T>>,
    pub ci_hi: Option<Vec<T>>,
    pub averaging: Averaging,
    #[serde(default)]
    pub truncation: Option<Truncation>,
    #[serde(default)]
    pub warnings: Vec<EstimatorWarning>,
    #[serde(default)]
    pub tmle_trace: Vec<TmleStep>,
}

impl<T: Real> PsiEstimate<T> {
    pub fn t_max(&self) -> usize {
        self.psi.len() - 1
    }
}

/// `ψ̂_t = φ̂_{0,0} + Σ_{k=1}^t (φ̂_{k,k} - φ̂_{k-1,k})` for every `t` up to
/// the requested one, with the unit-weighted natural course.
pub fn assemble_psi<T: Real>(phis: &PhiTable<T>, panel: &LongPanel<T>, t: usize) -> Result<PsiEstimate<T>, EstimationError> {
    assemble_psi_with(phis, panel, t, Averaging::FitWeights)
}

pub fn assemble_psi_with<T: Real>(
    phis: &PhiTable<T>,
    panel: &LongPanel<T>,
    t: usize,
    averaging: Averaging,
) -> Result<PsiEstimate<T>, EstimationError> {
    if t >= panel.n_times() {
        return Err(EstimationError::TimeOutOfRange { t, n_times: panel.n_times() });
    }
    let missing = phis.missing(t);
    if !missing.is_empty() {
        return Err(EstimationError::IncompletePhiTable(missing));
    }
    let mut psi = Vec::with_capacity(t + 1);
    let mut acc = phis.get(0, 0).unwrap();
    psi.push(acc);
    for k in 1..=t {
        acc += phis.get(k, k).unwrap() - phis.get(k - 1, k).unwrap();
        psi.push(acc);
    }
    let w: Vec<T> = match averaging {
        Averaging::FitWeights => panel.fit_weights(),
        Averaging::Trials => match panel.trials() {
            Some(tr) => tr.iter().map(|&n| T::from_u64(n).unwrap()).collect(),
            None => vec![T::one(); panel.n_units()],
        },
    };
    let natural_course: Vec<T> = (0..=t)
        .map(|s| crate::stats::weighted_mean(&panel.response_column(s), &w))
        .collect();
    let contrast = psi.iter().zip(&natural_course).map(|(&p, &n)| p - n).collect();
    Ok(PsiEstimate {
        estimator: phis.estimator,
        psi,
        natural_course,
        contrast,
        se: None,
        ci_lo: None,
        ci_hi: None,
        averaging,
        truncation: None,
        warnings: Vec::new(),
        tmle_trace: Vec::new(),
    })
}

//! Longitudinal panels, treatment regimes and the staggered-discontinuation
//! checks every estimator relies on.

mod adherence;
mod io;
mod regime;

pub use adherence::{adherence, validate_staggered, AdherenceMatrix, ValidationReport};
pub use io::{read_panel_csv, read_panel_csv_from, write_panel_csv, write_panel_csv_to};
pub use regime::{DynamicRule, History, Regime, RegimeFile};

use thiserror::Error;

use crate::scalar::Real;

/// Reserved names that designs resolve to observed treatment and outcome.
pub const TREATMENT_NAME: &str = "A";
pub const OUTCOME_NAME: &str = "Y";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PanelError {
    #[error("panel shape mismatch: {0}")]
    Shape(String),
    #[error("treatment must be 0 or 1 (unit {unit}, time {time})")]
    NonBinaryTreatment { unit: String, time: usize },
    #[error("unit weight must be positive and finite (unit {0})")]
    NonPositiveWeight(String),
    #[error("outcome out of [0, trials] (unit {unit}, time {time})")]
    OutcomeExceedsTrials { unit: String, time: usize },
    #[error("covariate name {0:?} is reserved or duplicated")]
    BadCovariateName(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("units deviate from the regime at baseline: {0:?}")]
    BaselineDeviation(Vec<String>),
    #[error("regime plan has length {plan} but the panel has {times} time points")]
    RegimeTooShort { plan: usize, times: usize },
    #[error("regime rule refers to unknown covariate {0:?}")]
    RegimeCovariate(String),
    #[error("invalid regime specification: {0}")]
    RegimeSpec(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("time index must be 0-based and contiguous (unit {unit})")]
    NonContiguousTime { unit: String },
}

/// Raw columns of a panel, validated by [`LongPanel::from_parts`].
///
/// Per-(unit, time) arrays are unit-major: entry `i * n_times + t`.
/// Covariates are `(i * n_times + t) * n_covariates + c`.
#[derive(Debug, Clone)]
pub struct PanelParts<T> {
    pub unit_ids: Vec<String>,
    pub n_times: usize,
    pub covariate_names: Vec<String>,
    pub covariates: Vec<T>,
    pub treatment: Vec<u8>,
    pub outcome: Vec<T>,
    pub unit_weight: Option<Vec<T>>,
    pub trials: Option<Vec<u64>>,
}

/// Rectangular unit × time panel of covariates `W`, binary treatment `A`
/// and outcome `Y`, with optional per-unit weights and binomial trials.
#[derive(Debug, Clone, PartialEq)]
pub struct LongPanel<T> {
    unit_ids: Vec<String>,
    n_times: usize,
    covariate_names: Vec<String>,
    covariates: Vec<T>,
    treatment: Vec<u8>,
    outcome: Vec<T>,
    unit_weight: Vec<T>,
    trials: Option<Vec<u64>>,
}

impl<T: Real> LongPanel<T> {
    pub fn from_parts(parts: PanelParts<T>) -> Result<Self, PanelError> {
        let n = parts.unit_ids.len();
        let tt = parts.n_times;
        let p = parts.covariate_names.len();
        if n == 0 || tt == 0 {
            return Err(PanelError::Shape("panel needs at least one unit and one time".into()));
        }
        if parts.treatment.len() != n * tt || parts.outcome.len() != n * tt {
            return Err(PanelError::Shape("treatment/outcome length must be n_units * n_times".into()));
        }
        if parts.covariates.len() != n * tt * p {
            return Err(PanelError::Shape("covariate length must be n_units * n_times * n_covariates".into()));
        }
        for (k, name) in parts.covariate_names.iter().enumerate() {
            if name.is_empty()
                || name == TREATMENT_NAME
                || name == OUTCOME_NAME
                || parts.covariate_names[..k].contains(name)
            {
                return Err(PanelError::BadCovariateName(name.clone()));
            }
        }
        for (idx, &a) in parts.treatment.iter().enumerate() {
            if a > 1 {
                return Err(PanelError::NonBinaryTreatment {
                    unit: parts.unit_ids[idx / tt].clone(),
                    time: idx % tt,
                });
            }
        }
        if parts.outcome.iter().any(|v| !v.is_finite()) {
            return Err(PanelError::NonFinite("outcome".into()));
        }
        if parts.covariates.iter().any(|v| !v.is_finite()) {
            return Err(PanelError::NonFinite("covariates".into()));
        }
        let unit_weight = match parts.unit_weight {
            Some(w) => {
                if w.len() != n {
                    return Err(PanelError::Shape("unit_weight length must be n_units".into()));
                }
                if let Some(i) = w.iter().position(|v| !(v.is_finite() && *v > T::zero())) {
                    return Err(PanelError::NonPositiveWeight(parts.unit_ids[i].clone()));
                }
                w
            }
            None => vec![T::one(); n],
        };
        if let Some(tr) = &parts.trials {
            if tr.len() != n {
                return Err(PanelError::Shape("trials length must be n_units".into()));
            }
            for i in 0..n {
                let cap = T::from_u64(tr[i]).expect("trials representable");
                if tr[i] == 0 {
                    return Err(PanelError::Shape(format!("trials must be positive (unit {})", parts.unit_ids[i])));
                }
                for t in 0..tt {
                    let y = parts.outcome[i * tt + t];
                    if y < T::zero() || y > cap {
                        return Err(PanelError::OutcomeExceedsTrials {
                            unit: parts.unit_ids[i].clone(),
                            time: t,
                        });
                    }
                }
            }
        }
        Ok(Self {
            unit_ids: parts.unit_ids,
            n_times: tt,
            covariate_names: parts.covariate_names,
            covariates: parts.covariates,
            treatment: parts.treatment,
            outcome: parts.outcome,
            unit_weight,
            trials: parts.trials,
        })
    }

    pub fn into_parts(self) -> PanelParts<T> {
        PanelParts {
            unit_ids: self.unit_ids,
            n_times: self.n_times,
            covariate_names: self.covariate_names,
            covariates: self.covariates,
            treatment: self.treatment,
            outcome: self.outcome,
            unit_weight: Some(self.unit_weight),
            trials: self.trials,
        }
    }

    #[inline]
    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    #[inline]
    pub fn n_times(&self) -> usize {
        self.n_times
    }

    /// Last time index τ.
    #[inline]
    pub fn tau(&self) -> usize {
        self.n_times - 1
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }

    #[inline]
    pub fn covariate(&self, unit: usize, time: usize, index: usize) -> T {
        let p = self.covariate_names.len();
        self.covariates[(unit * self.n_times + time) * p + index]
    }

    #[inline]
    pub fn treatment(&self, unit: usize, time: usize) -> u8 {
        self.treatment[unit * self.n_times + time]
    }

    /// Raw outcome (a count when trials are present).
    #[inline]
    pub fn outcome(&self, unit: usize, time: usize) -> T {
        self.outcome[unit * self.n_times + time]
    }

    /// Outcome on the modelling scale: `Y / trials` for count panels.
    #[inline]
    pub fn response(&self, unit: usize, time: usize) -> T {
        let y = self.outcome(unit, time);
        match &self.trials {
            Some(tr) => y / T::from_u64(tr[unit]).expect("trials representable"),
            None => y,
        }
    }

    /// Modelling-scale outcome column at `time`.
    pub fn response_column(&self, time: usize) -> Vec<T> {
        (0..self.n_units()).map(|i| self.response(i, time)).collect()
    }

    #[inline]
    pub fn unit_weight(&self, unit: usize) -> T {
        self.unit_weight[unit]
    }

    pub fn unit_weights(&self) -> &[T] {
        &self.unit_weight
    }

    pub fn trials(&self) -> Option<&[u64]> {
        self.trials.as_deref()
    }

    /// Likelihood weight of a unit: `unit_weight × trials` for count panels,
    /// otherwise `unit_weight`.
    pub fn fit_weights(&self) -> Vec<T> {
        match &self.trials {
            Some(tr) => self
                .unit_weight
                .iter()
                .zip(tr)
                .map(|(&w, &n)| w * T::from_u64(n).expect("trials representable"))
                .collect(),
            None => self.unit_weight.clone(),
        }
    }

    /// Panel made of the given units, in order; repeats are allowed and get
    /// fresh ids `<id>#<copy>` so unit ids stay unique.
    pub fn select_units(&self, units: &[usize]) -> Self {
        let tt = self.n_times;
        let p = self.covariate_names.len();
        let mut seen = vec![0usize; self.n_units()];
        let mut ids = Vec::with_capacity(units.len());
        let mut cov = Vec::with_capacity(units.len() * tt * p);
        let mut trt = Vec::with_capacity(units.len() * tt);
        let mut out = Vec::with_capacity(units.len() * tt);
        let mut w = Vec::with_capacity(units.len());
        let mut trials = self.trials.as_ref().map(|_| Vec::with_capacity(units.len()));
        for &u in units {
            let copy = seen[u];
            seen[u] += 1;
            ids.push(if copy == 0 {
                self.unit_ids[u].clone()
            } else {
                format!("{}#{}", self.unit_ids[u], copy)
            });
            cov.extend_from_slice(&self.covariates[u * tt * p..(u + 1) * tt * p]);
            trt.extend_from_slice(&self.treatment[u * tt..(u + 1) * tt]);
            out.extend_from_slice(&self.outcome[u * tt..(u + 1) * tt]);
            w.push(self.unit_weight[u]);
            if let (Some(dst), Some(src)) = (trials.as_mut(), self.trials.as_ref()) {
                dst.push(src[u]);
            }
        }
        Self {
            unit_ids: ids,
            n_times: tt,
            covariate_names: self.covariate_names.clone(),
            covariates: cov,
            treatment: trt,
            outcome: out,
            unit_weight: w,
            trials,
        }
    }

    /// Same panel with the raw outcome array replaced (unit-major).
    pub fn with_outcomes(&self, outcome: Vec<T>) -> Result<Self, PanelError> {
        let mut parts = self.clone().into_parts();
        parts.outcome = outcome;
        Self::from_parts(parts)
    }

    /// Same panel with per-unit weights replaced.
    pub fn with_unit_weights(&self, weights: Vec<T>) -> Result<Self, PanelError> {
        let mut parts = self.clone().into_parts();
        parts.unit_weight = Some(weights);
        Self::from_parts(parts)
    }

    /// History view of one unit, used by dynamic regime rules.
    pub fn unit_history(&self, unit: usize) -> UnitHistory<'_, T> {
        UnitHistory { panel: self, unit }
    }
}

/// Observed history of one unit in a panel.
pub struct UnitHistory<'a, T> {
    panel: &'a LongPanel<T>,
    unit: usize,
}

impl<T: Real> History for UnitHistory<'_, T> {
    fn covariate(&self, name: &str, time: usize) -> Option<f64> {
        let c = self.panel.covariate_index(name)?;
        Some(self.panel.covariate(self.unit, time, c).as_f64())
    }

    fn treatment(&self, time: usize) -> u8 {
        self.panel.treatment(self.unit, time)
    }
}


#[cfg(test)]
mod tests {
    use super::testutil::small_panel;
    use super::*;

    #[test]
    fn rejects_invalid_panels() {
        let base = PanelParts {
            unit_ids: vec!["a".into()],
            n_times: 2,
            covariate_names: vec!["W".into()],
            covariates: vec![0.0, 1.0],
            treatment: vec![1, 2],
            outcome: vec![0.0, 0.0],
            unit_weight: None,
            trials: None,
        };
        assert!(matches!(
            LongPanel::from_parts(base.clone()),
            Err(PanelError::NonBinaryTreatment { time: 1, .. })
        ));
        let mut p = base.clone();
        p.treatment = vec![1, 1];
        p.unit_weight = Some(vec![0.0]);
        assert!(matches!(LongPanel::from_parts(p), Err(PanelError::NonPositiveWeight(_))));
        let mut p = base.clone();
        p.treatment = vec![1, 1];
        p.outcome = vec![3.0, 1.0];
        p.trials = Some(vec![2]);
        assert!(matches!(LongPanel::from_parts(p), Err(PanelError::OutcomeExceedsTrials { time: 0, .. })));
        let mut p = base;
        p.treatment = vec![1, 1];
        p.covariate_names = vec!["A".into()];
        assert!(matches!(LongPanel::from_parts(p), Err(PanelError::BadCovariateName(_))));
    }

    #[test]
    fn select_units_keeps_trajectories() {
        let p = small_panel(&[&[1, 1], &[1, 0]], &[&[0.1, 0.2], &[0.3, 0.4]], &[&[1.0, 2.0], &[3.0, 4.0]]);
        let s = p.select_units(&[1, 1, 0]);
        assert_eq!(s.n_units(), 3);
        assert_eq!(s.unit_ids(), &["1".to_string(), "1#1".into(), "0".into()]);
        for (new, old) in [(0, 1), (1, 1), (2, 0)] {
            for t in 0..2 {
                assert_eq!(s.outcome(new, t), p.outcome(old, t));
                assert_eq!(s.treatment(new, t), p.treatment(old, t));
                assert_eq!(s.covariate(new, t, 0), p.covariate(old, t, 0));
            }
        }
    }

    #[test]
    fn response_uses_trials() {
        let p = LongPanel::from_parts(PanelParts {
            unit_ids: vec!["s".into()],
            n_times: 1,
            covariate_names: vec![],
            covariates: vec![],
            treatment: vec![1],
            outcome: vec![5.0f64],
            unit_weight: Some(vec![0.01]),
            trials: Some(vec![100]),
        })
        .unwrap();
        assert_eq!(p.response(0, 0), 0.05);
        assert_eq!(p.fit_weights(), vec![1.0]);
    }
}

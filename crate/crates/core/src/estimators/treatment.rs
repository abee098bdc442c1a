use serde::{Deserialize, Serialize};

use super::{EstimationError, StepSpecs};
use crate::glm::{fit_glm, predict, CompiledDesign, FitResult, Scale};
use crate::linalg::Matrix;
use crate::panel::{adherence, validate_staggered, AdherenceMatrix, LongPanel, Regime};
use crate::scalar::Real;

/// Per-time treatment models `f(a_k | ā_{k-1})` (numerator) and
/// `f(a_k | ā_{k-1}, w̄_k)` (denominator), with fitted probabilities cached
/// for every unit.
///
/// Both are fit among units adherent through `k-1`. The denominator models
/// the observed treatment. The numerator models the treatment too when the
/// regime assigns the same value to every at-risk unit at `k` (always the
/// case for static plans); otherwise it models the indicator of following
/// the regime, so the stabilizing factor stays constant across followers.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct FittedTreatmentModels<T> {
    /// One fit per `k = 1..=τ`, or a single entry when pooled.
    pub numerator: Vec<FitResult<T>>,
    pub denominator: Vec<FitResult<T>>,
    pub pooled: bool,
    /// `[k][i]`: numerator probability of unit `i`'s observed `A_ik` (k = 0 is empty).
    num_observed: Vec<Vec<T>>,
    /// `[k][i]`: denominator probability of the observed `A_ik`.
    den_observed: Vec<Vec<T>>,
    /// `[k][i]`: denominator probability that unit `i` follows the regime at `k`.
    den_follow: Vec<Vec<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NumeratorResponse {
    Treatment,
    Follow,
}

impl<T: Real> FittedTreatmentModels<T> {
    pub fn n_times(&self) -> usize {
        self.den_follow.len()
    }

    /// Fitted denominator probability that unit `i` follows the regime at `k ≥ 1`.
    pub fn follow_probability(&self, k: usize, unit: usize) -> T {
        self.den_follow[k][unit]
    }

    pub fn numerator_observed(&self, k: usize, unit: usize) -> T {
        self.num_observed[k][unit]
    }

    pub fn denominator_observed(&self, k: usize, unit: usize) -> T {
        self.den_observed[k][unit]
    }

    /// Cumulative follow probability `ĝ_m = Π_{s=1}^m P̂(A_s = a*_s | ·)`; 1 at `m = 0`.
    pub fn cumulative_follow(&self, m: usize, unit: usize) -> T {
        (1..=m).fold(T::one(), |acc, s| acc * self.den_follow[s][unit])
    }
}

/// Fits numerator and denominator treatment models for `k = 1..=τ`.
pub fn fit_treatment_models<T: Real>(
    panel: &LongPanel<T>,
    regime: &Regime,
    num_spec: &StepSpecs,
    den_spec: &StepSpecs,
    pooled: bool,
) -> Result<FittedTreatmentModels<T>, EstimationError> {
    validate_staggered(panel, regime)?;
    let adh = adherence(panel, regime);
    fit_treatment_models_with(panel, &adh, num_spec, den_spec, pooled)
}

pub(crate) fn fit_treatment_models_with<T: Real>(
    panel: &LongPanel<T>,
    adh: &AdherenceMatrix,
    num_spec: &StepSpecs,
    den_spec: &StepSpecs,
    pooled: bool,
) -> Result<FittedTreatmentModels<T>, EstimationError> {
    let tt = panel.n_times();
    let n = panel.n_units();
    let all: Vec<usize> = (0..n).collect();
    let at_risk: Vec<Vec<usize>> = (0..tt)
        .map(|k| if k == 0 { all.clone() } else { adh.adherent_units(Some(k - 1)) })
        .collect();
    for (k, units) in at_risk.iter().enumerate().skip(1) {
        if units.len() < 2 {
            return Err(EstimationError::InsufficientAdherent(k));
        }
    }
    let constant_decisions = |k: usize| {
        let units = &at_risk[k];
        units.iter().all(|&i| adh.decision(i, k) == adh.decision(units[0], k))
    };
    let num_response = if (1..tt).all(constant_decisions) {
        NumeratorResponse::Treatment
    } else {
        NumeratorResponse::Follow
    };

    let treat = |i: usize, k: usize| T::from_u8(panel.treatment(i, k)).unwrap();
    let follows = |i: usize, k: usize| T::from_u8(u8::from(panel.treatment(i, k) == adh.decision(i, k))).unwrap();

    // Full-population design per k, for predictions.
    let full_design = |specs: &StepSpecs, k: usize| -> Result<Matrix<T>, EstimationError> {
        let spec = specs.for_step(k)?;
        let c = CompiledDesign::new(panel, spec, k).map_err(|e| EstimationError::glm(format!("treatment model at k={k}"), e))?;
        c.rows(panel, adh, &all).map_err(|e| EstimationError::glm(format!("treatment model at k={k}"), e))
    };

    let fit_w = panel.fit_weights();
    let fit_family = |specs: &StepSpecs, label: &str, response: &dyn Fn(usize, usize) -> T| -> Result<(Vec<FitResult<T>>, Vec<Vec<T>>), EstimationError> {
        if pooled && !matches!(specs, StepSpecs::Uniform(_)) {
            return Err(EstimationError::InvalidSpecs("pooled treatment models need a single spec".into()));
        }
        let designs: Vec<Option<Matrix<T>>> = (0..tt)
            .map(|k| if k == 0 { Ok(None) } else { full_design(specs, k).map(Some) })
            .collect::<Result<_, _>>()?;
        let fit_on = |ks: &[usize]| -> Result<FitResult<T>, EstimationError> {
            let parts: Vec<Matrix<T>> = ks
                .iter()
                .map(|&k| designs[k].as_ref().unwrap().select_rows(&at_risk[k]))
                .collect();
            let x = Matrix::vstack(&parts);
            let y: Vec<T> = ks.iter().flat_map(|&k| at_risk[k].iter().map(move |&i| response(i, k))).collect();
            let w: Vec<T> = ks.iter().flat_map(|&k| at_risk[k].iter().map(|&i| fit_w[i])).collect();
            let off = vec![T::zero(); y.len()];
            let spec = specs.for_step(ks[0])?;
            fit_glm(&x, &y, &w, &off, spec.family, spec.link).map_err(|e| {
                EstimationError::glm(
                    if ks.len() == 1 { format!("{label} treatment model at k={}", ks[0]) } else { format!("pooled {label} treatment model") },
                    e,
                )
            })
        };
        let fits: Vec<FitResult<T>> = if pooled {
            let ks: Vec<usize> = (1..tt).collect();
            if ks.is_empty() { Vec::new() } else { vec![fit_on(&ks)?] }
        } else {
            (1..tt).map(|k| fit_on(&[k])).collect::<Result<_, _>>()?
        };
        let mut probs = vec![Vec::new(); tt];
        for k in 1..tt {
            let fit = if pooled { &fits[0] } else { &fits[k - 1] };
            let x = designs[k].as_ref().unwrap();
            probs[k] = predict(fit, x, &vec![T::zero(); n], Scale::Response)
                .map_err(|e| EstimationError::glm(format!("{label} treatment prediction"), e))?;
        }
        Ok((fits, probs))
    };

    let (denominator, den_p) = fit_family(den_spec, "denominator", &treat)?;
    let (numerator, num_p) = match num_response {
        NumeratorResponse::Treatment => fit_family(num_spec, "numerator", &treat)?,
        NumeratorResponse::Follow => fit_family(num_spec, "numerator", &follows)?,
    };

    let pick = |p: T, hit: bool| if hit { p } else { T::one() - p };
    let mut num_observed = vec![Vec::new(); tt];
    let mut den_observed = vec![Vec::new(); tt];
    let mut den_follow = vec![Vec::new(); tt];
    for k in 1..tt {
        num_observed[k] = (0..n)
            .map(|i| match num_response {
                NumeratorResponse::Treatment => pick(num_p[k][i], panel.treatment(i, k) == 1),
                NumeratorResponse::Follow => pick(num_p[k][i], panel.treatment(i, k) == adh.decision(i, k)),
            })
            .collect();
        den_observed[k] = (0..n).map(|i| pick(den_p[k][i], panel.treatment(i, k) == 1)).collect();
        den_follow[k] = (0..n).map(|i| pick(den_p[k][i], adh.decision(i, k) == 1)).collect();
    }
    Ok(FittedTreatmentModels { numerator, denominator, pooled, num_observed, den_observed, den_follow })
}

/// Symmetric percentile truncation of weights: values below the `level`
/// quantile or above the `1 - level` quantile are clipped to them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub level: f64,
}

/// Denominator probabilities below this are treated as zero.
pub const ZERO_DENOMINATOR: f64 = 1e-12;

/// Stabilized weights `π_k` for every unit, evaluated at the observed
/// history. `π_0 = 1`.
pub fn compute_iptw_weights<T: Real>(
    panel: &LongPanel<T>,
    regime: &Regime,
    fits: &FittedTreatmentModels<T>,
    k: usize,
) -> Result<Vec<T>, EstimationError> {
    let adh = adherence(panel, regime);
    iptw_weights_with(panel, &adh, fits, k)
}

pub(crate) fn iptw_weights_with<T: Real>(
    panel: &LongPanel<T>,
    adh: &AdherenceMatrix,
    fits: &FittedTreatmentModels<T>,
    k: usize,
) -> Result<Vec<T>, EstimationError> {
    if k >= fits.n_times() && k > 0 {
        return Err(EstimationError::MissingTreatmentModels(k));
    }
    let tiny = T::lit(ZERO_DENOMINATOR);
    let mut w = vec![T::one(); panel.n_units()];
    for m in 1..=k {
        for (i, wi) in w.iter_mut().enumerate() {
            let den = fits.den_observed[m][i];
            if den < tiny && adh.adherent(i, m) {
                return Err(EstimationError::ZeroDenominator { unit: panel.unit_ids()[i].clone(), time: m });
            }
            *wi *= fits.num_observed[m][i] / den;
        }
    }
    Ok(w)
}

/// Clips the weights of the listed units at the truncation quantiles
/// computed among those units.
pub(crate) fn truncate<T: Real>(weights: &mut [T], units: &[usize], t: Truncation) {
    if units.is_empty() || !(t.level > 0.0) {
        return;
    }
    let mut v: Vec<f64> = units.iter().map(|&i| weights[i].as_f64()).collect();
    v.sort_by(f64::total_cmp);
    let lo = T::lit(crate::stats::quantile(&v, t.level));
    let hi = T::lit(crate::stats::quantile(&v, 1.0 - t.level));
    for &i in units {
        weights[i] = weights[i].max(lo).min(hi);
    }
}

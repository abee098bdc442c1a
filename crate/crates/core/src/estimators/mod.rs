//! IPTW, ICE and TMLE estimators of the `φ_{j,k}` cells and their assembly
//! into the intervention mean trajectory `ψ_t`.

mod assemble;
mod positivity;
mod treatment;
mod workspace;

pub use assemble::{assemble_psi, assemble_psi_with, PhiTable, PsiEstimate};
pub use positivity::{positivity_probe, PositivityFlag, DEFAULT_POSITIVITY_EPSILON};
pub use treatment::{compute_iptw_weights, fit_treatment_models, FittedTreatmentModels, Truncation, ZERO_DENOMINATOR};
pub use workspace::Workspace;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::glm::{Family, GlmError, Link, ModelSpec, Term};
use crate::panel::{LongPanel, PanelError, Regime};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Iptw,
    Ice,
    Tmle,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [EstimatorKind::Iptw, EstimatorKind::Ice, EstimatorKind::Tmle];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Iptw => "iptw",
            EstimatorKind::Ice => "ice",
            EstimatorKind::Tmle => "tmle",
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "iptw" => Ok(EstimatorKind::Iptw),
            "ice" => Ok(EstimatorKind::Ice),
            "tmle" => Ok(EstimatorKind::Tmle),
            _ => Err(format!("unknown estimator {s:?} (expected iptw, ice or tmle)")),
        }
    }
}

/// How the final ICE/TMLE predictions and the natural course are averaged
/// over units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Weight `unit_weight × trials`: the plain unit mean for individual
    /// data, the per-unit (state) mean for aggregated data with `1/n_s`
    /// weights.
    #[default]
    FitWeights,
    /// Weight by trials: the person-level mean for aggregated data.
    Trials,
}

/// One spec for every time, or a list indexed by time. Outcome lists are
/// indexed by the ICE step `m`; treatment lists by `k` (entry 0 unused).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepSpecs {
    Uniform(ModelSpec),
    PerStep(Vec<ModelSpec>),
}

impl StepSpecs {
    pub fn for_step(&self, m: usize) -> Result<&ModelSpec, EstimationError> {
        match self {
            StepSpecs::Uniform(s) => Ok(s),
            StepSpecs::PerStep(v) => v.get(m).ok_or(EstimationError::MissingSpec(m)),
        }
    }

    fn validate(&self) -> Result<(), GlmError> {
        match self {
            StepSpecs::Uniform(spec) => spec.validate(),
            StepSpecs::PerStep(v) => v.iter().try_for_each(ModelSpec::validate),
        }
    }

    fn all(&self) -> Vec<&ModelSpec> {
        match self {
            StepSpecs::Uniform(spec) => vec![spec],
            StepSpecs::PerStep(v) => v.iter().collect(),
        }
    }
}

impl From<ModelSpec> for StepSpecs {
    fn from(spec: ModelSpec) -> Self {
        StepSpecs::Uniform(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TmleOptions {
    /// `(L, U)` for the map onto `[0, 1]`; `None` picks `(0, 1)` for logit
    /// outcome models and the observed range padded by 5% otherwise.
    pub bounds: Option<(f64, f64)>,
    /// Scaled predictions are kept inside `[clip, 1 - clip]` before `logit`.
    pub clip: f64,
    /// Largest inverse cumulative treatment probability tolerated without
    /// an `ExtremeWeights` warning.
    pub weight_cap: f64,
}

impl Default for TmleOptions {
    fn default() -> Self {
        Self { bounds: None, clip: 1e-9, weight_cap: 1e3 }
    }
}

/// Model specs and options shared by all estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationSpecs {
    pub numerator: StepSpecs,
    pub denominator: StepSpecs,
    #[serde(default)]
    pub pooled_treatment: bool,
    pub outcome: StepSpecs,
    #[serde(default)]
    pub averaging: Averaging,
    #[serde(default)]
    pub tmle: TmleOptions,
    #[serde(default)]
    pub truncation: Option<Truncation>,
}

impl EstimationSpecs {
    /// Intercept-only treatment models and the given outcome specs.
    pub fn new(outcome: StepSpecs) -> Self {
        Self {
            numerator: ModelSpec::logistic(vec![Term::Intercept]).into(),
            denominator: ModelSpec::logistic(vec![Term::Intercept]).into(),
            pooled_treatment: false,
            outcome,
            averaging: Averaging::FitWeights,
            tmle: TmleOptions::default(),
            truncation: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, EstimationError> {
        let s: Self = serde_json::from_str(text).map_err(|e| EstimationError::InvalidSpecs(e.to_string()))?;
        for specs in [&s.numerator, &s.denominator] {
            specs.validate().map_err(|e| EstimationError::glm("treatment spec".into(), e))?;
            if specs.all().iter().any(|m| m.link != Link::Logit || m.family == Family::Gaussian) {
                return Err(EstimationError::InvalidSpecs("treatment models must be logistic".into()));
            }
        }
        s.outcome.validate().map_err(|e| EstimationError::glm("outcome spec".into(), e))?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EstimatorWarning {
    ExtremeWeights { j: usize, k: usize, m: usize, max_weight: f64 },
}

/// One TMLE targeting step: fluctuation `ε` and the weighted mean residual
/// after updating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TmleStep {
    pub j: usize,
    pub k: usize,
    pub m: usize,
    pub epsilon: f64,
    pub score: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error("{context}: {source}")]
    Glm { context: String, source: GlmError },
    #[error("fewer than 2 units at risk of deviating at k={0}")]
    InsufficientAdherent(usize),
    #[error("no units adherent through time {0}")]
    NoAdherentUnits(usize),
    #[error("fitted denominator probability underflows for unit {unit} at time {time}")]
    ZeroDenominator { unit: String, time: usize },
    #[error("phi table incomplete; missing cells (j, k): {0:?}")]
    IncompletePhiTable(Vec<(usize, usize)>),
    #[error("treatment models unavailable for k={0}")]
    MissingTreatmentModels(usize),
    #[error("no model spec for time {0}")]
    MissingSpec(usize),
    #[error("outcome steps not prepared through k={0}")]
    MissingOutcomeSteps(usize),
    #[error("time {t} outside panel with {n_times} time points")]
    TimeOutOfRange { t: usize, n_times: usize },
    #[error("invalid TMLE bounds: {0}")]
    InvalidBounds(String),
    #[error("invalid estimation specs: {0}")]
    InvalidSpecs(String),
    #[error("j must be k or k-1 (got j={j}, k={k})")]
    InvalidCell { j: usize, k: usize },
}

impl EstimationError {
    pub(crate) fn glm(context: String, source: GlmError) -> Self {
        EstimationError::Glm { context, source }
    }

    /// True for failures of the numerical procedures (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            EstimationError::Glm { source, .. } => {
                matches!(source, GlmError::NotConverged { .. } | GlmError::RankDeficient { .. })
            }
            EstimationError::ZeroDenominator { .. } | EstimationError::InsufficientAdherent(_) => true,
            _ => false,
        }
    }
}

fn check_cell(j: usize, k: usize) -> Result<(), EstimationError> {
    if j == k || j + 1 == k {
        Ok(())
    } else {
        Err(EstimationError::InvalidCell { j, k })
    }
}

/// IPTW estimate of `φ_{j,k}` from already fitted treatment models.
pub fn estimate_phi_iptw<T: Real>(
    panel: &LongPanel<T>,
    regime: &Regime,
    fits: &FittedTreatmentModels<T>,
    j: usize,
    k: usize,
) -> Result<T, EstimationError> {
    check_cell(j, k)?;
    crate::panel::validate_staggered(panel, regime)?;
    let adh = crate::panel::adherence(panel, regime);
    let units = adh.adherent_units(Some(k));
    if units.is_empty() {
        return Err(EstimationError::NoAdherentUnits(k));
    }
    let pi = compute_iptw_weights(panel, regime, fits, k)?;
    let w = panel.fit_weights();
    let y = panel.response_column(j);
    let (mut num, mut den) = (T::zero(), T::zero());
    for &i in &units {
        num += pi[i] * w[i] * y[i];
        den += pi[i] * w[i];
    }
    Ok(num / den)
}

/// ICE estimate of `φ_{j,k}`.
pub fn estimate_phi_ice<T: Real>(
    panel: &LongPanel<T>,
    regime: &Regime,
    outcome_specs: &StepSpecs,
    j: usize,
    k: usize,
) -> Result<T, EstimationError> {
    check_cell(j, k)?;
    let specs = EstimationSpecs::new(outcome_specs.clone());
    let ws = Workspace::new(panel, regime, &specs, &[EstimatorKind::Ice], k)?;
    ws.phi_ice(&ws.response(j), k)
}

/// TMLE estimate of `φ_{j,k}` with treatment models fit from `specs`.
pub fn estimate_phi_tmle<T: Real>(
    panel: &LongPanel<T>,
    regime: &Regime,
    specs: &EstimationSpecs,
    j: usize,
    k: usize,
) -> Result<(T, Vec<TmleStep>), EstimationError> {
    check_cell(j, k)?;
    let ws = Workspace::new(panel, regime, specs, &[EstimatorKind::Tmle], k)?;
    let mut trace = Vec::new();
    let mut warnings = Vec::new();
    let v = ws.phi_tmle(&ws.response(j), j, k, &mut trace, &mut warnings)?;
    Ok((v, trace))
}

/// `ψ̂_t` for `t = 0..=t_max` with one estimator.
pub fn estimate_psi<T: Real>(
    panel: &LongPanel<T>,
    regime: &Regime,
    kind: EstimatorKind,
    specs: &EstimationSpecs,
    t_max: Option<usize>,
) -> Result<PsiEstimate<T>, EstimationError> {
    let mut v = estimate_psi_many(panel, regime, &[kind], specs, t_max)?;
    Ok(v.remove(0))
}

/// Several estimators sharing one workspace (treatment fits, designs).
pub fn estimate_psi_many<T: Real>(
    panel: &LongPanel<T>,
    regime: &Regime,
    kinds: &[EstimatorKind],
    specs: &EstimationSpecs,
    t_max: Option<usize>,
) -> Result<Vec<PsiEstimate<T>>, EstimationError> {
    let t = t_max.unwrap_or(panel.n_times() - 1);
    let ws = Workspace::new(panel, regime, specs, kinds, t)?;
    kinds.iter().map(|&kind| psi_from_workspace(&ws, kind, t)).collect()
}

/// `ψ̂_t` from a prepared workspace using the observed outcomes.
pub fn psi_from_workspace<T: Real>(ws: &Workspace<'_, T>, kind: EstimatorKind, t: usize) -> Result<PsiEstimate<T>, EstimationError> {
    let outcome = |j: usize, _k: usize| Ok(ws.response(j));
    psi_with_outcomes(ws, kind, t, &outcome)
}

/// `ψ̂_t` with the outcome column of each `(j, k)` cell supplied by `outcome`.
pub fn psi_with_outcomes<T: Real>(
    ws: &Workspace<'_, T>,
    kind: EstimatorKind,
    t: usize,
    outcome: &dyn Fn(usize, usize) -> Result<Vec<T>, EstimationError>,
) -> Result<PsiEstimate<T>, EstimationError> {
    let mut trace = Vec::new();
    let mut warnings = Vec::new();
    let table = ws.phi_table(kind, t, outcome, &mut trace, &mut warnings)?;
    let mut est = assemble_psi_with(&table, ws.panel(), t, ws.specs().averaging)?;
    est.warnings = warnings;
    est.tmle_trace = trace;
    est.truncation = ws.specs().truncation;
    Ok(est)
}

/// Simulation-study outcome specs: `[1, W1, W2, W2²]` at each step plus the
/// same terms at lag 1 for `m ≥ 1`; `squares = false` drops the `W2²` terms.
pub fn lagged_outcome_specs(n_times: usize, squares: bool) -> StepSpecs {
    StepSpecs::PerStep(
        (0..n_times)
            .map(|m| {
                let mut terms = vec![Term::Intercept];
                for lag in 0..=usize::from(m >= 1) {
                    terms.push(Term::covariate("W1", lag));
                    terms.push(Term::covariate("W2", lag));
                    if squares {
                        terms.push(Term::power("W2", lag, 2));
                    }
                }
                ModelSpec::gaussian(terms)
            })
            .collect(),
    )
}

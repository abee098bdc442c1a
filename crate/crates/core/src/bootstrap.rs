//! Nonparametric bootstrap for `ψ̂_t`: unit resampling, or multinomial
//! resampling of outcome counts on aggregated panels.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{psi_from_workspace, EstimationError, EstimationSpecs, EstimatorKind, PsiEstimate, Workspace};
use crate::panel::{LongPanel, Regime};
use crate::rng::stream;
use crate::stats::{normal_quantile, quantile, std_dev};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapMode {
    UnitResample,
    MultinomialCounts,
}

impl std::str::FromStr for BootstrapMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unit" | "unit_resample" | "units" => Ok(Self::UnitResample),
            "multinomial" | "multinomial_counts" => Ok(Self::MultinomialCounts),
            other => Err(format!("unknown bootstrap mode {other:?} (expected unit or multinomial)")),
        }
    }
}

impl std::fmt::Display for BootstrapMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::UnitResample => "unit",
            Self::MultinomialCounts => "multinomial",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub mode: BootstrapMode,
    pub replicates: usize,
    pub seed: u64,
    pub level: f64,
    /// Also report percentile intervals.
    #[serde(default)]
    pub percentile: bool,
}

impl BootstrapConfig {
    pub fn new(mode: BootstrapMode, replicates: usize, seed: u64) -> Self {
        Self { mode, replicates, seed, level: 0.95, percentile: false }
    }

    fn validate(&self) -> Result<(), BootstrapError> {
        if self.replicates < 2 {
            return Err(BootstrapError::InvalidConfig("at least 2 replicates are needed".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(BootstrapError::InvalidConfig(format!("level {} is not in (0, 1)", self.level)));
        }
        Ok(())
    }
}

/// Share of failed replicates above which the bootstrap is abandoned.
pub const MAX_FAILED_FRACTION: f64 = 0.10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BootstrapError {
    #[error("base estimate failed: {0}")]
    Base(#[from] EstimationError),
    #[error("{failed} of {replicates} bootstrap replicates failed")]
    TooManyFailedReplicates { failed: usize, replicates: usize },
    #[error("invalid bootstrap configuration: {0}")]
    InvalidConfig(String),
    #[error("multinomial resampling needs a count panel with trials")]
    MissingTrials,
    #[error("outcome counts of unit {0} exceed its trials")]
    CountsExceedTrials(String),
}

impl BootstrapError {
    pub fn is_numerical(&self) -> bool {
        match self {
            Self::Base(e) => e.is_numerical(),
            Self::TooManyFailedReplicates { .. } => true,
            _ => false,
        }
    }
}

/// Bootstrap output for one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Point estimate on the original panel with `se` and the Wald interval filled.
    pub estimate: PsiEstimate<f64>,
    pub mode: BootstrapMode,
    pub replicates: usize,
    pub failed: usize,
    pub level: f64,
    /// `ψ̂_0..ψ̂_t` of each successful replicate, in replicate order.
    pub psi_draws: Vec<Vec<f64>>,
    /// Natural-course means of the same replicates.
    pub natural_draws: Vec<Vec<f64>>,
    pub contrast_se: Vec<f64>,
    pub percentile: Option<(Vec<f64>, Vec<f64>)>,
}

/// The resampled panel for replicate `b`. Depends only on `(seed, b)`.
pub fn resample(panel: &LongPanel<f64>, mode: BootstrapMode, seed: u64, b: usize) -> Result<LongPanel<f64>, BootstrapError> {
    let mut rng = stream(seed, b as u64);
    match mode {
        BootstrapMode::UnitResample => {
            let n = panel.n_units();
            let units: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            Ok(panel.select_units(&units))
        }
        BootstrapMode::MultinomialCounts => {
            let trials = panel.trials().ok_or(BootstrapError::MissingTrials)?;
            let tt = panel.n_times();
            let mut out = Vec::with_capacity(panel.n_units() * tt);
            for (i, &n_s) in trials.iter().enumerate() {
                let counts: Vec<f64> = (0..tt).map(|t| panel.outcome(i, t)).collect();
                out.extend(multinomial_counts(&mut rng, n_s, &counts).ok_or_else(|| BootstrapError::CountsExceedTrials(panel.unit_ids()[i].clone()))?);
            }
            panel.with_outcomes(out).map_err(|e| BootstrapError::Base(e.into()))
        }
    }
}

/// Draws `(Y_0..Y_τ, survivors) ~ Multinomial(n, counts / n)` by sequential
/// conditional binomials and returns the first `τ + 1` cells.
fn multinomial_counts(rng: &mut impl Rng, n: u64, counts: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = counts.iter().sum();
    if total > n as f64 + 1e-9 || counts.iter().any(|&c| c < 0.0) {
        return None;
    }
    let mut remaining_n = n;
    let mut remaining_mass = n as f64;
    let mut drawn = Vec::with_capacity(counts.len());
    for &c in counts {
        let p = if remaining_mass > 0.0 { (c / remaining_mass).clamp(0.0, 1.0) } else { 0.0 };
        let x = if remaining_n == 0 || p == 0.0 { 0 } else { Binomial::new(remaining_n, p).expect("valid binomial").sample(rng) };
        drawn.push(x as f64);
        remaining_n -= x;
        remaining_mass -= c;
    }
    Some(drawn)
}

/// Bootstraps several estimators at once; each replicate builds one shared
/// workspace and refits every model.
pub fn bootstrap_many(
    panel: &LongPanel<f64>,
    regime: &Regime,
    kinds: &[EstimatorKind],
    specs: &EstimationSpecs,
    t: usize,
    config: &BootstrapConfig,
) -> Result<Vec<BootstrapResult>, BootstrapError> {
    config.validate()?;
    if config.mode == BootstrapMode::MultinomialCounts && panel.trials().is_none() {
        return Err(BootstrapError::MissingTrials);
    }
    let base_ws = Workspace::new(panel, regime, specs, kinds, t)?;
    let base: Vec<PsiEstimate<f64>> = kinds.iter().map(|&k| psi_from_workspace(&base_ws, k, t)).collect::<Result<_, _>>()?;

    let per_rep: Vec<Vec<Option<PsiEstimate<f64>>>> = (0..config.replicates)
        .into_par_iter()
        .map(|b| -> Result<Vec<Option<PsiEstimate<f64>>>, BootstrapError> {
            let rep = resample(panel, config.mode, config.seed, b)?;
            Ok(match Workspace::new(&rep, regime, specs, kinds, t) {
                Ok(ws) => kinds.iter().map(|&k| psi_from_workspace(&ws, k, t).ok()).collect(),
                Err(_) => vec![None; kinds.len()],
            })
        })
        .collect::<Result<_, _>>()?;

    let z = normal_quantile(0.5 + config.level / 2.0);
    let alpha = 1.0 - config.level;
    let mut results = Vec::with_capacity(kinds.len());
    for (i, est) in base.into_iter().enumerate() {
        let ok: Vec<&PsiEstimate<f64>> = per_rep.iter().filter_map(|r| r[i].as_ref()).collect();
        let failed = config.replicates - ok.len();
        if failed as f64 > MAX_FAILED_FRACTION * config.replicates as f64 || ok.len() < 2 {
            return Err(BootstrapError::TooManyFailedReplicates { failed, replicates: config.replicates });
        }
        let psi_draws: Vec<Vec<f64>> = ok.iter().map(|e| e.psi.clone()).collect();
        let natural_draws: Vec<Vec<f64>> = ok.iter().map(|e| e.natural_course.clone()).collect();
        let column = |draws: &[Vec<f64>], s: usize| draws.iter().map(|d| d[s]).collect::<Vec<f64>>();
        let se: Vec<f64> = (0..=t).map(|s| std_dev(&column(&psi_draws, s))).collect();
        let contrast_se = (0..=t)
            .map(|s| std_dev(&ok.iter().map(|e| e.contrast[s]).collect::<Vec<_>>()))
            .collect();
        let percentile = config.percentile.then(|| {
            let (lo, hi): (Vec<f64>, Vec<f64>) = (0..=t)
                .map(|s| {
                    let mut v = column(&psi_draws, s);
                    v.sort_by(f64::total_cmp);
                    (quantile(&v, alpha / 2.0), quantile(&v, 1.0 - alpha / 2.0))
                })
                .unzip();
            (lo, hi)
        });
        let mut estimate = est;
        estimate.ci_lo = Some(estimate.psi.iter().zip(&se).map(|(p, s)| p - z * s).collect());
        estimate.ci_hi = Some(estimate.psi.iter().zip(&se).map(|(p, s)| p + z * s).collect());
        estimate.se = Some(se);
        results.push(BootstrapResult {
            estimate,
            mode: config.mode,
            replicates: config.replicates,
            failed,
            level: config.level,
            psi_draws,
            natural_draws,
            contrast_se,
            percentile,
        });
    }
    Ok(results)
}

pub fn bootstrap_psi(
    panel: &LongPanel<f64>,
    regime: &Regime,
    kind: EstimatorKind,
    specs: &EstimationSpecs,
    t: usize,
    config: &BootstrapConfig,
) -> Result<BootstrapResult, BootstrapError> {
    Ok(bootstrap_many(panel, regime, &[kind], specs, t, config)?.remove(0))
}

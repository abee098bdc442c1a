//! Simulation studies on the confounded monotone-uptake design: the
//! estimator × model-specification bias/variance matrix and bootstrap
//! interval coverage.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_many, BootstrapConfig, BootstrapMode};
use crate::dgp::{simulate_counterfactual, simulate_observed, DgpParams, W1, W2};
use crate::estimators::{lagged_outcome_specs, EstimationError, EstimationSpecs, EstimatorKind, StepSpecs, Workspace};
use crate::glm::{ModelSpec, Term};
use crate::panel::{LongPanel, Regime};
use crate::rng::derive_seed;
use crate::stats::{lilliefors, mean, variance, LillieforsTest};

/// Default seed for the study's parameter draw.
pub const DEFAULT_PARAM_SEED: u64 = 2531;
/// Default seed for the study's datasets.
pub const DEFAULT_DATA_SEED: u64 = 7;

/// One row of the specification matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyRow {
    pub estimator: EstimatorKind,
    pub outcome_correct: bool,
    pub treatment_correct: bool,
}

impl StudyRow {
    pub const ALL: [StudyRow; 8] = [
        StudyRow::new(EstimatorKind::Ice, true, true),
        StudyRow::new(EstimatorKind::Ice, false, true),
        StudyRow::new(EstimatorKind::Iptw, true, true),
        StudyRow::new(EstimatorKind::Iptw, true, false),
        StudyRow::new(EstimatorKind::Tmle, true, true),
        StudyRow::new(EstimatorKind::Tmle, false, false),
        StudyRow::new(EstimatorKind::Tmle, true, false),
        StudyRow::new(EstimatorKind::Tmle, false, true),
    ];

    pub const fn new(estimator: EstimatorKind, outcome_correct: bool, treatment_correct: bool) -> Self {
        Self { estimator, outcome_correct, treatment_correct }
    }

    /// `ice_true`, `ice_qfal`, `iptw_gfal`, `tmle_bfal`, ...
    pub fn label(&self) -> String {
        let suffix = match (self.outcome_correct, self.treatment_correct) {
            (true, true) => "true",
            (false, true) => "qfal",
            (true, false) => "gfal",
            (false, false) => "bfal",
        };
        format!("{}_{suffix}", self.estimator)
    }

    /// Whether the estimator is expected to be consistent.
    pub fn consistent(&self) -> bool {
        match self.estimator {
            EstimatorKind::Ice => self.outcome_correct,
            EstimatorKind::Iptw => self.treatment_correct,
            EstimatorKind::Tmle => self.outcome_correct || self.treatment_correct,
        }
    }
}

/// Outcome and treatment specs for the simulation design. The correct
/// versions include `W2²`; the misspecified ones omit it everywhere.
pub fn study_specs(n_times: usize, outcome_correct: bool, treatment_correct: bool) -> EstimationSpecs {
    let mut specs = EstimationSpecs::new(lagged_outcome_specs(n_times, outcome_correct));
    let mut terms = vec![Term::Intercept, Term::covariate(W1, 0), Term::covariate(W2, 0)];
    if treatment_correct {
        terms.push(Term::power(W2, 0, 2));
    }
    specs.denominator = StepSpecs::Uniform(ModelSpec::logistic(terms));
    specs
}

/// The never-treated plan over `n_times` points.
pub fn never_treated(n_times: usize) -> Regime {
    Regime::always(0, n_times)
}

/// `ψ̂_t` for every row on one dataset. Rows sharing a specification pair
/// share a workspace.
pub fn study_estimates(panel: &LongPanel<f64>, t: usize, rows: &[StudyRow]) -> Vec<Result<f64, EstimationError>> {
    let regime = never_treated(panel.n_times());
    let mut out: Vec<Option<Result<f64, EstimationError>>> = vec![None; rows.len()];
    for q in [true, false] {
        for g in [true, false] {
            let idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].outcome_correct == q && rows[i].treatment_correct == g).collect();
            if idx.is_empty() {
                continue;
            }
            let kinds: Vec<EstimatorKind> = idx.iter().map(|&i| rows[i].estimator).collect();
            let specs = study_specs(panel.n_times(), q, g);
            match Workspace::new(panel, &regime, &specs, &kinds, t) {
                Ok(ws) => {
                    for &i in &idx {
                        let r = crate::estimators::psi_from_workspace(&ws, rows[i].estimator, t).map(|e| e.psi[t]);
                        out[i] = Some(r);
                    }
                }
                Err(e) => {
                    for &i in &idx {
                        out[i] = Some(Err(e.clone()));
                    }
                }
            }
        }
    }
    out.into_iter().map(|r| r.expect("every row estimated")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub n: usize,
    pub reps: usize,
    pub tau: usize,
    pub param_seed: u64,
    pub seed: u64,
    /// Forced draws for the Monte Carlo check of the closed-form truth.
    pub truth_draws: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self { n: 10_000, reps: 200, tau: 5, param_seed: DEFAULT_PARAM_SEED, seed: DEFAULT_DATA_SEED, truth_draws: 1_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRowSummary {
    pub label: String,
    pub row: StudyRow,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean: f64,
    pub bias: f64,
    /// Bias over its Monte Carlo standard error.
    pub bias_z: f64,
    pub mc_se: f64,
    /// Empirical variance times `n`.
    pub variance_n: f64,
    /// Bias and z against the forced-draw Monte Carlo truth.
    pub bias_mc: f64,
    pub bias_z_mc: f64,
    /// `None` when there are too few replicates for the test.
    pub lilliefors_p: Option<f64>,
    pub estimates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub config: StudyConfig,
    pub params: DgpParams,
    pub truth: f64,
    pub truth_mc: f64,
    pub truth_mc_se: f64,
    pub rows: Vec<StudyRowSummary>,
}

impl StudyResult {
    pub fn row(&self, label: &str) -> Option<&StudyRowSummary> {
        self.rows.iter().find(|r| r.label == label)
    }
}

/// Runs the specification matrix over `reps` datasets of size `n`, dataset
/// `r` drawn from seed `derive(seed, "dataset") + r`.
pub fn run_study(config: &StudyConfig) -> StudyResult {
    run_study_with(config, crate::dgp::draw_params(config.param_seed, config.tau))
}

pub fn run_study_with(config: &StudyConfig, params: DgpParams) -> StudyResult {
    let t = config.tau;
    let truth = params.analytic_mu(&vec![0; t + 1])[t];
    let cf = simulate_counterfactual(config.truth_draws.max(2), &params, Some(&never_treated(t + 1)), derive_seed(config.seed, "truth"));
    let base = derive_seed(config.seed, "dataset");
    let per_rep: Vec<Vec<Result<f64, EstimationError>>> = (0..config.reps)
        .into_par_iter()
        .map(|r| {
            let panel = simulate_observed(config.n, &params, base.wrapping_add(r as u64));
            study_estimates(&panel, t, &StudyRow::ALL)
        })
        .collect();
    let rows = StudyRow::ALL
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let estimates: Vec<f64> = per_rep.iter().filter_map(|v| v[i].as_ref().ok().copied()).collect();
            summarize(*row, estimates, config.reps, config.n, truth, cf.mean[t])
        })
        .collect();
    StudyResult { config: config.clone(), params, truth, truth_mc: cf.mean[t], truth_mc_se: cf.se[t], rows }
}

fn summarize(row: StudyRow, estimates: Vec<f64>, reps: usize, n: usize, truth: f64, truth_mc: f64) -> StudyRowSummary {
    let n_ok = estimates.len();
    let (m, var) = if n_ok >= 2 { (mean(&estimates), variance(&estimates)) } else { (estimates.first().copied().unwrap_or(f64::NAN), f64::NAN) };
    let mc_se = (var / n_ok as f64).sqrt();
    let bias = m - truth;
    StudyRowSummary {
        label: row.label(),
        row,
        n_ok,
        n_failed: reps - n_ok,
        mean: m,
        bias,
        bias_z: bias / mc_se,
        bias_mc: m - truth_mc,
        bias_z_mc: (m - truth_mc) / mc_se,
        mc_se,
        variance_n: var * n as f64,
        lilliefors_p: lilliefors(&estimates).map(|LillieforsTest { p_value, .. }| p_value),
        estimates,
    }
}

/// Bootstrap interval coverage of `μ_t` for the given estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageConfig {
    pub n: usize,
    pub datasets: usize,
    pub replicates: usize,
    pub tau: usize,
    pub level: f64,
    pub param_seed: u64,
    pub seed: u64,
    pub truth_draws: usize,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        Self { n: 10_000, datasets: 200, replicates: 200, tau: 5, level: 0.95, param_seed: DEFAULT_PARAM_SEED, seed: DEFAULT_DATA_SEED + 1, truth_draws: 1_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub estimator: EstimatorKind,
    pub covered: usize,
    /// Intervals covering the forced-draw Monte Carlo truth.
    pub covered_mc: usize,
    pub evaluated: usize,
    pub coverage: f64,
    pub mean_se: f64,
    pub empirical_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub config: CoverageConfig,
    pub truth: f64,
    pub truth_mc: f64,
    pub summaries: Vec<CoverageSummary>,
    pub failed_datasets: usize,
}

/// For each dataset: point estimates with correct specs, unit-resampling
/// bootstrap standard errors, and whether the Wald interval covers `μ_t`.
pub fn coverage_study(config: &CoverageConfig, kinds: &[EstimatorKind]) -> CoverageResult {
    let params = crate::dgp::draw_params(config.param_seed, config.tau);
    let t = config.tau;
    let truth = params.analytic_mu(&vec![0; t + 1])[t];
    let specs = study_specs(t + 1, true, true);
    let regime = never_treated(t + 1);
    let truth_mc = simulate_counterfactual(config.truth_draws.max(2), &params, Some(&regime), derive_seed(config.seed, "truth")).mean[t];
    let z = crate::stats::normal_quantile(0.5 + config.level / 2.0);
    let base = derive_seed(config.seed, "dataset");
    let boot_base = derive_seed(config.seed, "bootstrap");
    let per: Vec<Option<Vec<(f64, f64)>>> = (0..config.datasets)
        .into_par_iter()
        .map(|d| {
            let panel = simulate_observed(config.n, &params, base.wrapping_add(d as u64));
            let bc = BootstrapConfig::new(BootstrapMode::UnitResample, config.replicates, boot_base.wrapping_add(d as u64));
            let bc = BootstrapConfig { level: config.level, ..bc };
            let res = bootstrap_many(&panel, &regime, kinds, &specs, t, &bc).ok()?;
            Some(res.iter().map(|r| (r.estimate.psi[t], r.estimate.se.as_ref().expect("se filled")[t])).collect())
        })
        .collect();
    let ok: Vec<&Vec<(f64, f64)>> = per.iter().flatten().collect();
    let summaries = kinds
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let covered = ok.iter().filter(|v| (v[i].0 - truth).abs() <= z * v[i].1).count();
            let covered_mc = ok.iter().filter(|v| (v[i].0 - truth_mc).abs() <= z * v[i].1).count();
            let points: Vec<f64> = ok.iter().map(|v| v[i].0).collect();
            CoverageSummary {
                estimator: k,
                covered,
                covered_mc,
                evaluated: ok.len(),
                coverage: covered as f64 / ok.len().max(1) as f64,
                mean_se: mean(&ok.iter().map(|v| v[i].1).collect::<Vec<_>>()),
                empirical_sd: crate::stats::std_dev(&points),
            }
        })
        .collect();
    CoverageResult { config: config.clone(), truth, truth_mc, summaries, failed_datasets: per.len() - ok.len() }
}

/// Plain-text rendering with one line per row.
pub fn format_study(result: &StudyResult) -> String {
    let mut s = format!(
        "truth {:.4} (forced-draw check {:.4} ± {:.4}); n = {}, reps = {}\n{:<10} {:>10} {:>10} {:>8} {:>8} {:>10} {:>6}\n",
        result.truth, result.truth_mc, result.truth_mc_se, result.config.n, result.config.reps, "row", "var*n", "bias*100", "z", "z_mc", "lillie_p", "fail"
    );
    for r in &result.rows {
        let p = r.lilliefors_p.map_or("n/a".to_string(), |p| format!("{p:.3}"));
        s += &format!(
            "{:<10} {:>10.3} {:>10.3} {:>8.2} {:>8.2} {:>10} {:>6}\n",
            r.label,
            r.variance_n,
            100.0 * r.bias,
            r.bias_z,
            r.bias_z_mc,
            p,
            r.n_failed
        );
    }
    s
}

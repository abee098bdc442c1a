//! Aggregated count panels: one row per (state, week) with death counts,
//! population, a binary policy indicator and the recent change in cases.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bootstrap::BootstrapResult;
use crate::estimators::{Averaging, EstimationSpecs, PsiEstimate, StepSpecs};
use crate::glm::{ModelSpec, Term};
use crate::panel::{LongPanel, PanelError, PanelParts, Regime};
use crate::rng::stream;
use crate::scalar::expit;
use crate::stats::{normal_quantile, std_dev};

/// Covariate name of the log case change.
pub const LOG_W: &str = "logW";
/// Covariate name when the case change is kept untransformed.
pub const RAW_W: &str = "W";

#[derive(Debug, Error)]
pub enum AggError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("time index must be contiguous from 0 (unit {unit})")]
    NonContiguousTime { unit: String },
    #[error("count out of range for unit {unit} at time {time}: {reason}")]
    NegativeCount { unit: String, time: usize, reason: String },
    #[error("case change must be positive for the log transform (unit {unit}, time {time})")]
    NonpositiveCaseChange { unit: String, time: usize },
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error("lives saved needs bootstrap replicate draws")]
    MissingBootstrap,
}

/// Column names in the input file for each field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaMap {
    pub unit_id: String,
    pub time: String,
    pub deaths: String,
    pub population: String,
    pub policy: String,
    pub case_change: String,
    /// Store `log(case_change)` as `logW` (otherwise the raw value as `W`).
    pub log_case_change: bool,
}

impl Default for SchemaMap {
    fn default() -> Self {
        Self {
            unit_id: "unit_id".into(),
            time: "time".into(),
            deaths: "deaths".into(),
            population: "population".into(),
            policy: "policy".into(),
            case_change: "case_change".into(),
            log_case_change: true,
        }
    }
}

impl SchemaMap {
    pub fn from_json(text: &str) -> Result<Self, AggError> {
        serde_json::from_str(text).map_err(|e| AggError::SchemaMismatch(format!("schema map: {e}")))
    }

    pub fn covariate_name(&self) -> &'static str {
        if self.log_case_change {
            LOG_W
        } else {
            RAW_W
        }
    }
}

/// An ingested aggregated panel.
#[derive(Debug, Clone)]
pub struct AggPanel {
    /// Outcome = deaths, trials = population, unit weight = 1/population.
    pub panel: LongPanel<f64>,
    pub populations: Vec<u64>,
    /// `"log"` or `"identity"`: transform applied to the case change.
    pub transform: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggRow {
    pub unit_id: String,
    pub time: usize,
    pub deaths: u64,
    pub population: u64,
    pub policy: u8,
    pub case_change: f64,
}

pub fn ingest_agg(path: impl AsRef<Path>, schema: &SchemaMap) -> Result<AggPanel, AggError> {
    ingest_agg_from(std::fs::File::open(path)?, schema)
}

pub fn ingest_agg_from(reader: impl Read, schema: &SchemaMap) -> Result<AggPanel, AggError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| AggError::SchemaMismatch(format!("column {name:?} not found (have {:?})", headers.iter().collect::<Vec<_>>())))
    };
    let idx = [
        col(&schema.unit_id)?,
        col(&schema.time)?,
        col(&schema.deaths)?,
        col(&schema.population)?,
        col(&schema.policy)?,
        col(&schema.case_change)?,
    ];
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(idx[i]).unwrap_or("");
        let bad = |what: &str, e: &dyn std::fmt::Display| AggError::SchemaMismatch(format!("row {}: {what}: {e}", line + 2));
        let unit_id = field(0).to_string();
        let time: i64 = field(1).parse().map_err(|e| bad("time", &e))?;
        let deaths: f64 = field(2).parse().map_err(|e| bad("deaths", &e))?;
        let population: f64 = field(3).parse().map_err(|e| bad("population", &e))?;
        let policy: u8 = field(4).parse().map_err(|e| bad("policy", &e))?;
        let case_change: f64 = field(5).parse().map_err(|e| bad("case_change", &e))?;
        let t = usize::try_from(time).map_err(|_| AggError::NonContiguousTime { unit: unit_id.clone() })?;
        let count_err = |reason: &str| AggError::NegativeCount { unit: unit_id.clone(), time: t, reason: reason.into() };
        if deaths < 0.0 || deaths.fract() != 0.0 {
            return Err(count_err("deaths must be a nonnegative integer"));
        }
        if population < 1.0 || population.fract() != 0.0 {
            return Err(count_err("population must be a positive integer"));
        }
        if deaths > population {
            return Err(count_err("deaths exceed population"));
        }
        rows.push(AggRow { unit_id, time: t, deaths: deaths as u64, population: population as u64, policy, case_change });
    }
    build_agg_panel(&rows, schema.log_case_change)
}

/// Assembles rows (any order) into a panel, validating the invariants.
pub fn build_agg_panel(rows: &[AggRow], log_case_change: bool) -> Result<AggPanel, AggError> {
    let mut by_unit: BTreeMap<&str, Vec<&AggRow>> = BTreeMap::new();
    let mut order: Vec<&str> = Vec::new();
    for r in rows {
        let e = by_unit.entry(&r.unit_id).or_insert_with(|| {
            order.push(&r.unit_id);
            Vec::new()
        });
        e.push(r);
    }
    if order.is_empty() {
        return Err(AggError::SchemaMismatch("no data rows".into()));
    }
    let n_times = by_unit[order[0]].len();
    let mut parts = PanelParts {
        unit_ids: Vec::new(),
        n_times,
        covariate_names: vec![if log_case_change { LOG_W } else { RAW_W }.to_string()],
        covariates: Vec::new(),
        treatment: Vec::new(),
        outcome: Vec::new(),
        unit_weight: Some(Vec::new()),
        trials: Some(Vec::new()),
    };
    let mut populations = Vec::new();
    for unit in order {
        let mut v = by_unit[unit].clone();
        v.sort_by_key(|r| r.time);
        if v.len() != n_times || v.iter().enumerate().any(|(t, r)| r.time != t) {
            return Err(AggError::NonContiguousTime { unit: unit.into() });
        }
        let pop = v[0].population;
        if v.iter().any(|r| r.population != pop) {
            return Err(AggError::SchemaMismatch(format!("population of unit {unit} changes over time")));
        }
        for r in &v {
            let w = if log_case_change {
                if !(r.case_change > 0.0) {
                    return Err(AggError::NonpositiveCaseChange { unit: unit.into(), time: r.time });
                }
                r.case_change.ln()
            } else {
                r.case_change
            };
            parts.covariates.push(w);
            parts.treatment.push(r.policy);
            parts.outcome.push(r.deaths as f64);
        }
        parts.unit_ids.push(unit.into());
        parts.unit_weight.as_mut().unwrap().push(1.0 / pop as f64);
        parts.trials.as_mut().unwrap().push(pop);
        populations.push(pop);
    }
    let transform = if log_case_change { "log" } else { "identity" }.to_string();
    Ok(AggPanel { panel: LongPanel::from_parts(parts)?, populations, transform })
}

/// The same data as rates `Y / n` without trials, with unit weights equal
/// to the count panel's likelihood weights.
pub fn to_rate_panel(panel: &LongPanel<f64>) -> Result<LongPanel<f64>, PanelError> {
    let fit_w = panel.fit_weights();
    let tt = panel.n_times();
    let mut parts = panel.clone().into_parts();
    parts.outcome = (0..panel.n_units()).flat_map(|i| (0..tt).map(move |t| (i, t))).map(|(i, t)| panel.response(i, t)).collect();
    parts.trials = None;
    parts.unit_weight = Some(fit_w);
    LongPanel::from_parts(parts)
}

/// Models for the aggregated analysis: pooled logistic treatment models on
/// a 3-df time spline (numerator) plus the log case change (denominator),
/// and per-step quasibinomial outcome models on the log case change.
pub fn agg_specs(covariate: &str, averaging: Averaging) -> EstimationSpecs {
    let spline = Term::TimeSpline { df: 3 };
    let mut specs = EstimationSpecs::new(StepSpecs::Uniform(ModelSpec::quasibinomial(vec![Term::Intercept, Term::covariate(covariate, 0)])));
    specs.numerator = StepSpecs::Uniform(ModelSpec::logistic(vec![Term::Intercept, spline.clone()]));
    specs.denominator = StepSpecs::Uniform(ModelSpec::logistic(vec![Term::Intercept, spline, Term::covariate(covariate, 0)]));
    specs.pooled_treatment = true;
    specs.averaging = averaging;
    specs
}

/// The sustained-policy regime over `n_times` weeks.
pub fn policy_regime(n_times: usize) -> Regime {
    Regime::always(1, n_times)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LivesSaved {
    pub point: f64,
    pub se: f64,
    pub ci: (f64, f64),
    pub level: f64,
    /// Per-week contributions `(natural_t − ψ_t) Σ n_s`.
    pub by_week: Vec<f64>,
}

/// `Σ_t (natural_t − ψ_t) × Σ_s n_s`. The interval uses the standard
/// deviation of the same sum over bootstrap replicates.
pub fn lives_saved(psi: &PsiEstimate<f64>, boot: Option<&BootstrapResult>, populations: &[u64]) -> Result<LivesSaved, AggError> {
    let boot = boot.filter(|b| b.psi_draws.len() >= 2).ok_or(AggError::MissingBootstrap)?;
    let total: f64 = populations.iter().map(|&n| n as f64).sum();
    let by_week: Vec<f64> = psi.natural_course.iter().zip(&psi.psi).map(|(n, p)| (n - p) * total).collect();
    let point = by_week.iter().sum();
    let draws: Vec<f64> = boot
        .psi_draws
        .iter()
        .zip(&boot.natural_draws)
        .map(|(p, n)| n.iter().zip(p).map(|(a, b)| a - b).sum::<f64>() * total)
        .collect();
    let se = std_dev(&draws);
    let z = normal_quantile(0.5 + boot.level / 2.0);
    Ok(LivesSaved { point, se, ci: (point - z * se, point + z * se), level: boot.level, by_week })
}

/// Parameters of the planted-effect simulator.
///
/// Each state has a log case change `L_st = g_s + slope·t` with
/// `g_s ~ N(g_mean, g_sd)`. All states start under the policy and lift it
/// with hazard `expit(h0 + h1·t + h2·(L_st − g_mean))`. Deaths are
/// `Binomial(n_s, r_st)` with `r_st = expit(c0 + c1·t + β·L_st) + δ·(1 − A_st)`,
/// so the policy lowers the weekly death rate by exactly `δ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub units: usize,
    pub weeks: usize,
    pub delta: f64,
    pub pop_log_mean: f64,
    pub pop_log_sd: f64,
    pub g_mean: f64,
    pub g_sd: f64,
    pub slope: f64,
    pub h0: f64,
    pub h1: f64,
    pub h2: f64,
    pub c0: f64,
    pub c1: f64,
    pub beta: f64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            units: 43,
            weeks: 12,
            delta: 2e-5,
            pop_log_mean: 15.0,
            pop_log_sd: 1.0,
            g_mean: 4.5,
            g_sd: 0.6,
            slope: -0.12,
            h0: -2.6,
            h1: 0.08,
            h2: -0.9,
            c0: -8.9,
            c1: -0.01,
            beta: 0.25,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedSample {
    pub rows: Vec<AggRow>,
    /// `δ × Σ_{s,t} n_s (1 − A_st)`: deaths caused by lifting the policy.
    pub planted_lives: f64,
}

/// Draws one planted-effect dataset.
pub fn simulate_planted(config: &PlantedConfig, seed: u64) -> PlantedSample {
    let mut rng = stream(seed, 0);
    let std = Normal::new(0.0, 1.0).expect("valid normal");
    let mut rows = Vec::with_capacity(config.units * config.weeks);
    let mut planted = 0.0;
    for s in 0..config.units {
        let pop = (config.pop_log_mean + config.pop_log_sd * std.sample(&mut rng)).exp().round().max(1000.0) as u64;
        let g = config.g_mean + config.g_sd * std.sample(&mut rng);
        let mut on = 1u8;
        for t in 0..config.weeks {
            let l = g + config.slope * t as f64;
            if t > 0 && on == 1 {
                let hazard = expit(config.h0 + config.h1 * t as f64 + config.h2 * (l - config.g_mean));
                if rng.random::<f64>() < hazard {
                    on = 0;
                }
            }
            let rate = expit(config.c0 + config.c1 * t as f64 + config.beta * l) + config.delta * f64::from(1 - on);
            let deaths = Binomial::new(pop, rate.clamp(0.0, 1.0)).expect("valid binomial").sample(&mut rng);
            planted += config.delta * pop as f64 * f64::from(1 - on);
            rows.push(AggRow { unit_id: format!("S{:02}", s + 1), time: t, deaths, population: pop, policy: on, case_change: l.exp() });
        }
    }
    PlantedSample { rows, planted_lives: planted }
}

/// Seed of the shipped `sample_agg.csv`.
pub const SAMPLE_SEED: u64 = 2020;

/// The shipped synthetic sample: 43 states × 12 weeks.
pub fn sample_rows() -> PlantedSample {
    simulate_planted(&PlantedConfig::default(), SAMPLE_SEED)
}

pub fn write_agg_csv(rows: &[AggRow], writer: impl std::io::Write) -> Result<(), AggError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["unit_id", "time", "deaths", "population", "policy", "case_change"])?;
    for r in rows {
        w.write_record([
            r.unit_id.clone(),
            r.time.to_string(),
            r.deaths.to_string(),
            r.population.to_string(),
            r.policy.to_string(),
            format!("{:.6}", r.case_change),
        ])?;
    }
    w.flush()?;
    Ok(())
}

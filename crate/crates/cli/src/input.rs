use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;

use ptgformula::agg::{agg_specs, ingest_agg, policy_regime, SchemaMap};
use ptgformula::estimators::{Averaging, EstimationSpecs, EstimatorKind};
use ptgformula::panel::{read_panel_csv, Regime};
use ptgformula::study::{never_treated, study_specs};
use ptgformula::Panel;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AveragingArg {
    /// Unit weights times trials (state mean for count panels).
    FitWeights,
    /// Trials only (person mean for count panels).
    Trials,
}

impl From<AveragingArg> for Averaging {
    fn from(a: AveragingArg) -> Self {
        match a {
            AveragingArg::FitWeights => Averaging::FitWeights,
            AveragingArg::Trials => Averaging::Trials,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InputArgs {
    /// Long-format panel CSV (unit, time, Y, A, W_* columns).
    #[arg(long, required_unless_present = "agg", conflicts_with = "agg")]
    pub panel: Option<PathBuf>,
    /// Aggregated state-week counts CSV.
    #[arg(long)]
    pub agg: Option<PathBuf>,
    /// JSON column map for --agg input.
    #[arg(long, requires = "agg")]
    pub schema: Option<PathBuf>,
    /// Use the case change untransformed instead of its log.
    #[arg(long, requires = "agg")]
    pub raw_case_change: bool,
    /// Model specs: a preset (correct, qfal, gfal, bfal, agg) or a JSON file.
    /// Defaults to `correct` for panels and `agg` for aggregated input.
    #[arg(long)]
    pub specs: Option<String>,
    /// Regime: `never`, `always`, or a JSON file. Defaults to `never` for
    /// panels and `always` (policy kept) for aggregated input.
    #[arg(long)]
    pub regime: Option<String>,
    /// Averaging over units. Aggregated input reports both conventions
    /// unless one is chosen here.
    #[arg(long, value_enum)]
    pub averaging: Option<AveragingArg>,
    /// Last time point to estimate (default: the last in the panel).
    #[arg(long)]
    pub t_max: Option<usize>,
}

pub struct Loaded {
    pub panel: Panel,
    pub regime: Regime,
    pub specs: EstimationSpecs,
    pub populations: Option<Vec<u64>>,
    pub inputs: Vec<PathBuf>,
    pub t: usize,
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))
}

impl InputArgs {
    pub fn load(&self) -> Result<Loaded, CliError> {
        let mut inputs = Vec::new();
        let (panel, populations, covariate) = if let Some(path) = &self.agg {
            let mut schema = match &self.schema {
                Some(p) => {
                    inputs.push(p.clone());
                    SchemaMap::from_json(&read_text(p)?)?
                }
                None => SchemaMap::default(),
            };
            if self.raw_case_change {
                schema.log_case_change = false;
            }
            inputs.push(path.clone());
            let a = ingest_agg(path, &schema)?;
            (a.panel, Some(a.populations), Some(schema.covariate_name()))
        } else {
            let path = self.panel.as_ref().expect("clap requires an input");
            inputs.push(path.clone());
            (read_panel_csv::<f64>(path)?, None, None)
        };
        let nt = panel.n_times();

        let preset = self.specs.as_deref().unwrap_or(if covariate.is_some() { "agg" } else { "correct" });
        let mut specs = match (preset, covariate) {
            ("correct", _) => study_specs(nt, true, true),
            ("qfal", _) => study_specs(nt, false, true),
            ("gfal", _) => study_specs(nt, true, false),
            ("bfal", _) => study_specs(nt, false, false),
            ("agg", Some(c)) => agg_specs(c, Averaging::FitWeights),
            ("agg", None) => return Err(CliError::validation("the agg spec preset needs --agg input")),
            (file, _) => {
                inputs.push(PathBuf::from(file));
                EstimationSpecs::from_json(&read_text(Path::new(file))?)?
            }
        };
        if let Some(a) = self.averaging {
            specs.averaging = a.into();
        }

        let regime = match self.regime.as_deref().unwrap_or(if covariate.is_some() { "always" } else { "never" }) {
            "never" => never_treated(nt),
            "always" => policy_regime(nt),
            file => {
                inputs.push(PathBuf::from(file));
                Regime::from_json(&read_text(Path::new(file))?)?
            }
        };
        let t = self.t_max.unwrap_or(nt - 1);
        if t >= nt {
            return Err(CliError::validation(format!("--t-max {t} is outside the panel ({nt} time points)")));
        }
        Ok(Loaded { panel, regime, specs, populations, inputs, t })
    }

    /// The chosen averaging, both for aggregated input, else the spec's own.
    pub fn averagings(&self, loaded: &Loaded) -> Vec<Averaging> {
        match self.averaging {
            Some(a) => vec![a.into()],
            None if loaded.populations.is_some() => vec![Averaging::FitWeights, Averaging::Trials],
            None => vec![loaded.specs.averaging],
        }
    }
}

pub fn averaging_label(a: Averaging) -> &'static str {
    match a {
        Averaging::FitWeights => "unit-mean",
        Averaging::Trials => "person-mean",
    }
}

pub fn parse_estimators(s: &str) -> Result<Vec<EstimatorKind>, CliError> {
    if s == "all" {
        return Ok(EstimatorKind::ALL.to_vec());
    }
    s.split(',').map(|p| p.trim().parse::<EstimatorKind>().map_err(CliError::validation)).collect()
}

mod error;
mod input;
mod manifest;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use ptgformula::agg::{build_agg_panel, ingest_agg, lives_saved, simulate_planted, write_agg_csv, PlantedConfig, SchemaMap, SAMPLE_SEED};
use ptgformula::bootstrap::{bootstrap_many, BootstrapConfig, BootstrapMode};
use ptgformula::dgp::{draw_params, simulate_observed, DgpParams};
use ptgformula::estimators::{estimate_psi_many, Averaging, PsiEstimate};
use ptgformula::oracle::{shipped_fixtures, OracleFixture};
use ptgformula::panel::write_panel_csv_to;
use ptgformula::sensitivity::{breakeven, grid_from_json, sensitivity_sweep, sensitivity_sweep_bootstrap};
use ptgformula::study::{coverage_study, format_study, run_study_with, CoverageConfig, StudyConfig, DEFAULT_DATA_SEED, DEFAULT_PARAM_SEED};

use error::CliError;
use input::{averaging_label, parse_estimators, InputArgs};
use manifest::{manifest_path, ManifestBuilder};

#[derive(Parser)]
#[command(name = "ptgf", version, about = "Parallel-trends g-formula estimation")]
struct Cli {
    /// Worker threads for replication and bootstrap loops.
    #[arg(long, global = true, env = "PTGF_JOBS")]
    jobs: Option<usize>,
    /// Where to write the run manifest (default: next to the main output,
    /// or stderr when writing to stdout).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the longitudinal study DGP to a panel CSV plus a parameter sidecar.
    Simulate(SimulateArgs),
    /// Point estimates of the counterfactual mean trajectory.
    Estimate(EstimateArgs),
    /// Bootstrap standard errors and Wald intervals.
    Bootstrap(BootstrapArgs),
    /// Sweep a grid of parallel-trends departures.
    Sensitivity(SensitivityArgs),
    /// Bias, variance and normality of the specification matrix over simulated datasets.
    #[command(name = "replicate-table1")]
    ReplicateTable1(StudyArgs),
    /// Bootstrap interval coverage of the true counterfactual mean.
    Coverage(CoverageArgs),
    /// Validate aggregated counts and write them as a long panel.
    #[command(name = "ingest-agg")]
    IngestAgg(IngestArgs),
    /// Simulate aggregated counts with a planted policy effect.
    #[command(name = "simulate-agg")]
    SimulateAgg(SimulateAggArgs),
    /// Check identification on exactly solvable discrete DGPs.
    #[command(name = "oracle-check")]
    OracleCheck(OracleArgs),
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    tau: usize,
    /// Data seed.
    #[arg(long)]
    seed: u64,
    /// Seed of the coefficient draw.
    #[arg(long, default_value_t = DEFAULT_PARAM_SEED)]
    param_seed: u64,
    /// Parameter JSON replacing the seeded draw.
    #[arg(long, conflicts_with = "param_seed")]
    params: Option<PathBuf>,
    /// Override the latent coefficient.
    #[arg(long)]
    theta: Option<f64>,
    /// Time-varying latent coefficients (comma separated, tau + 1 values).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta_by_time: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
    /// Parameter sidecar (default: `<out>.params.json`).
    #[arg(long)]
    params_out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct EstimateArgs {
    #[command(flatten)]
    input: InputArgs,
    /// `ice`, `iptw`, `tmle`, a comma list, or `all`.
    #[arg(long, default_value = "all")]
    estimator: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct BootArgs {
    /// Bootstrap replicates.
    #[arg(long = "B", default_value_t = 200)]
    replicates: usize,
    /// `unit` or `multinomial` (default: multinomial for aggregated input).
    #[arg(long)]
    mode: Option<BootstrapMode>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
}

impl BootArgs {
    fn config(&self, agg: bool) -> BootstrapConfig {
        let mode = self.mode.unwrap_or(if agg { BootstrapMode::MultinomialCounts } else { BootstrapMode::UnitResample });
        BootstrapConfig { level: self.level, ..BootstrapConfig::new(mode, self.replicates, self.seed) }
    }
}

#[derive(Args, Serialize)]
struct BootstrapArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value = "all")]
    estimator: String,
    #[command(flatten)]
    boot: BootArgs,
    /// Also report percentile intervals.
    #[arg(long)]
    percentile: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file for cumulative lives saved (aggregated input only).
    #[arg(long, requires = "agg")]
    lives_saved: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SensitivityArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value = "all")]
    estimator: String,
    /// JSON array of departure specifications.
    #[arg(long)]
    delta_grid: PathBuf,
    /// Bootstrap replicates for contrast intervals (0 for none).
    #[arg(long = "B", default_value_t = 0)]
    replicates: usize,
    #[arg(long)]
    mode: Option<BootstrapMode>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct StudyArgs {
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long, default_value_t = 5)]
    tau: usize,
    #[arg(long, default_value_t = DEFAULT_DATA_SEED)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_PARAM_SEED)]
    param_seed: u64,
    /// Forced draws for the Monte Carlo truth.
    #[arg(long, default_value_t = 1_000_000)]
    truth_draws: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct CoverageArgs {
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    datasets: usize,
    #[arg(long = "B", default_value_t = 200)]
    replicates: usize,
    #[arg(long, default_value_t = 5)]
    tau: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = DEFAULT_DATA_SEED + 1)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_PARAM_SEED)]
    param_seed: u64,
    #[arg(long, default_value_t = 1_000_000)]
    truth_draws: usize,
    #[arg(long, default_value = "ice,tmle")]
    estimator: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    raw_case_change: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SimulateAggArgs {
    #[arg(long, default_value_t = SAMPLE_SEED)]
    seed: u64,
    /// Override the planted weekly death-rate reduction.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct OracleArgs {
    /// Fixture JSON files (default: the built-in set).
    #[arg(long)]
    fixture: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        if j == 0 {
            fail(&CliError::validation("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global().expect("thread pool configured once");
    }
    let manifest = cli.manifest.as_deref();
    let res = match &cli.command {
        Command::Simulate(a) => simulate(a, manifest),
        Command::Estimate(a) => estimate(a, manifest),
        Command::Bootstrap(a) => bootstrap(a, manifest),
        Command::Sensitivity(a) => sensitivity(a, manifest),
        Command::ReplicateTable1(a) => study(a, manifest),
        Command::Coverage(a) => coverage(a, manifest),
        Command::IngestAgg(a) => ingest(a, manifest),
        Command::SimulateAgg(a) => simulate_agg(a, manifest),
        Command::OracleCheck(a) => oracle_check(a, manifest),
    };
    if let Err(e) = res {
        fail(&e);
    }
}

fn fail(e: &CliError) -> ! {
    eprintln!("{}", e.to_json());
    std::process::exit(e.kind.exit_code());
}

fn emit(out: Option<&Path>, text: &str, m: &mut ManifestBuilder) -> Result<(), CliError> {
    match out {
        Some(p) => {
            std::fs::write(p, text)?;
            m.output(p)
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn num(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

fn opt(v: Option<&Vec<f64>>, t: usize) -> String {
    v.map_or(String::new(), |x| num(x[t]))
}

fn psi_csv(groups: &[(Averaging, Vec<PsiEstimate<f64>>)]) -> String {
    let mut s = String::from("estimator,t,psi,natural_course,contrast,se,ci_lo,ci_hi,averaging\n");
    for (avg, estimates) in groups {
        for e in estimates {
            for t in 0..e.psi.len() {
                writeln!(
                    s,
                    "{},{t},{},{},{},{},{},{},{}",
                    e.estimator,
                    num(e.psi[t]),
                    num(e.natural_course[t]),
                    num(e.contrast[t]),
                    opt(e.se.as_ref(), t),
                    opt(e.ci_lo.as_ref(), t),
                    opt(e.ci_hi.as_ref(), t),
                    averaging_label(*avg)
                )
                .unwrap();
            }
        }
    }
    s
}

fn simulate(a: &SimulateArgs, explicit: Option<&Path>) -> Result<(), CliError> {
    let mut m = ManifestBuilder::new("simulate", a);
    m.seed("data", a.seed);
    let (mut params, source) = match &a.params {
        Some(p) => {
            m.input(p)?;
            let text = std::fs::read_to_string(p)?;
            let params: DgpParams = serde_json::from_str(&text)?;
            (params, serde_json::json!({ "file": p, "sha256": manifest::sha256_file(p)? }))
        }
        None => {
            m.seed("params", a.param_seed);
            (draw_params(a.param_seed, a.tau), serde_json::json!({ "drawn": { "seed": a.param_seed, "tau": a.tau } }))
        }
    };
    let mut overrides = BTreeMap::new();
    if let Some(theta) = a.theta {
        params.theta = theta;
        overrides.insert("theta", serde_json::json!(theta));
    }
    if let Some(v) = &a.theta_by_time {
        params.theta_by_time = Some(v.clone());
        overrides.insert("theta_by_time", serde_json::json!(v));
    }
    params.validate().map_err(CliError::validation)?;
    if a.n == 0 {
        return Err(CliError::validation("--n must be positive"));
    }
    let panel = simulate_observed(a.n, &params, a.seed);
    let mut buf = Vec::new();
    write_panel_csv_to(&panel, &mut buf)?;
    std::fs::write(&a.out, buf)?;
    m.output(&a.out)?;

    let sidecar = a.params_out.clone().unwrap_or_else(|| {
        let mut s = a.out.as_os_str().to_owned();
        s.push(".params.json");
        PathBuf::from(s)
    });
    let doc = serde_json::json!({
        "n": a.n,
        "seed": a.seed,
        "param_source": source,
        "overrides": overrides,
        "params": params,
    });
    std::fs::write(&sidecar, serde_json::to_string_pretty(&doc)? + "\n")?;
    m.output(&sidecar)?;
    m.note("overrides", &overrides);
    m.finish(manifest_path(explicit, Some(&a.out)).as_deref())?;
    Ok(())
}

fn estimate(a: &EstimateArgs, explicit: Option<&Path>) -> Result<(), CliError> {
    let mut m = ManifestBuilder::new("estimate", a);
    let l = a.input.load()?;
    for p in &l.inputs {
        m.input(p)?;
    }
    let kinds = parse_estimators(&a.estimator)?;
    let mut groups = Vec::new();
    let mut warnings = Vec::new();
    for avg in a.input.averagings(&l) {
        let mut specs = l.specs.clone();
        specs.averaging = avg;
        let est = estimate_psi_many(&l.panel, &l.regime, &kinds, &specs, Some(l.t))?;
        warnings.extend(est.iter().flat_map(|e| e.warnings.iter().map(|w| format!("{} ({}): {w:?}", e.estimator, averaging_label(avg)))));
        groups.push((avg, est));
    }
    if !warnings.is_empty() {
        m.note("warnings", warnings);
    }
    emit(a.out.as_deref(), &psi_csv(&groups), &mut m)?;
    m.finish(manifest_path(explicit, a.out.as_deref()).as_deref())?;
    Ok(())
}

fn bootstrap(a: &BootstrapArgs, explicit: Option<&Path>) -> Result<(), CliError> {
    let mut m = ManifestBuilder::new("bootstrap", a);
    let l = a.input.load()?;
    for p in &l.inputs {
        m.input(p)?;
    }
    let kinds = parse_estimators(&a.estimator)?;
    let mut cfg = a.boot.config(l.populations.is_some());
    cfg.percentile = a.percentile;
    m.seed("bootstrap", cfg.seed);
    m.note("mode", cfg.mode.to_string());
    let averagings = a.input.averagings(&l);
    let mut runs = Vec::new();
    for &avg in &averagings {
        let mut specs = l.specs.clone();
        specs.averaging = avg;
        runs.push((avg, bootstrap_many(&l.panel, &l.regime, &kinds, &specs, l.t, &cfg)?));
    }
    let failed: BTreeMap<String, usize> = runs
        .iter()
        .flat_map(|(avg, res)| res.iter().map(move |r| (format!("{}/{}", r.estimate.estimator, averaging_label(*avg)), r.failed)))
        .collect();
    m.note("failed_replicates", failed);
    let groups: Vec<_> = runs.iter().map(|(avg, res)| (*avg, res.iter().map(|r| r.estimate.clone()).collect())).collect();
    let mut text = psi_csv(&groups);
    if a.percentile {
        text.push_str("\nestimator,t,pct_lo,pct_hi,averaging\n");
        for (avg, res) in &runs {
            for r in res {
                let (lo, hi) = r.percentile.as_ref().expect("percentile requested");
                for t in 0..lo.len() {
                    writeln!(text, "{},{t},{},{},{}", r.estimate.estimator, num(lo[t]), num(hi[t]), averaging_label(*avg)).unwrap();
                }
            }
        }
    }
    emit(a.out.as_deref(), &text, &mut m)?;
    if let Some(pops) = &l.populations {
        let mut lives = BTreeMap::new();
        for (avg, res) in &runs {
            let by_kind: BTreeMap<String, _> = res
                .iter()
                .map(|r| Ok((r.estimate.estimator.to_string(), lives_saved(&r.estimate, Some(r), pops)?)))
                .collect::<Result<_, CliError>>()?;
            lives.insert(averaging_label(*avg), by_kind);
        }
        if let Some(p) = &a.lives_saved {
            std::fs::write(p, serde_json::to_string_pretty(&lives)? + "\n")?;
            m.output(p)?;
        }
        let points: BTreeMap<_, BTreeMap<_, f64>> =
            lives.iter().map(|(a, by)| (*a, by.iter().map(|(k, v)| (k.clone(), v.point)).collect())).collect();
        m.note("lives_saved", points);
    }
    m.finish(manifest_path(explicit, a.out.as_deref()).as_deref())?;
    Ok(())
}

fn sensitivity(a: &SensitivityArgs, explicit: Option<&Path>) -> Result<(), CliError> {
    let mut m = ManifestBuilder::new("sensitivity", a);
    let l = a.input.load()?;
    for p in &l.inputs {
        m.input(p)?;
    }
    m.input(&a.delta_grid)?;
    let grid = grid_from_json(&std::fs::read_to_string(&a.delta_grid)?)?;
    if grid.is_empty() {
        return Err(CliError::validation("the departure grid is empty"));
    }
    let kinds = parse_estimators(&a.estimator)?;
    let rows = if a.replicates > 0 {
        let boot = BootArgs { replicates: a.replicates, mode: a.mode, seed: a.seed, level: a.level };
        let cfg = boot.config(l.populations.is_some());
        m.seed("bootstrap", cfg.seed);
        sensitivity_sweep_bootstrap(&l.panel, &l.regime, &kinds, &l.specs, &grid, l.t, &cfg)?
    } else {
        sensitivity_sweep(&l.panel, &l.regime, &kinds, &l.specs, &grid, l.t)?
    };
    let mut text = String::from("index,label,estimator,t,psi_prime,contrast,contrast_se,ci_lo,ci_hi\n");
    for r in &rows {
        let (lo, hi) = r.contrast_ci.map_or((String::new(), String::new()), |(lo, hi)| (num(lo), num(hi)));
        writeln!(
            text,
            "{},\"{}\",{},{},{},{},{},{lo},{hi}",
            r.index,
            r.label.replace('"', "'"),
            r.estimator,
            l.t,
            num(r.psi_prime),
            num(r.contrast),
            r.contrast_se.map_or(String::new(), num)
        )
        .unwrap();
    }
    emit(a.out.as_deref(), &text, &mut m)?;
    if a.replicates > 0 {
        let be: BTreeMap<String, Option<usize>> = kinds.iter().map(|&k| (k.to_string(), breakeven(&rows, k).map(|r| r.index))).collect();
        m.note("breakeven_index", be);
    }
    m.finish(manifest_path(explicit, a.out.as_deref()).as_deref())?;
    Ok(())
}

fn study(a: &StudyArgs, explicit: Option<&Path>) -> Result<(), CliError> {
    let mut m = ManifestBuilder::new("replicate-table1", a);
    m.seed("data", a.seed);
    m.seed("params", a.param_seed);
    if a.n == 0 || a.reps == 0 || a.tau == 0 {
        return Err(CliError::validation("--n, --reps and --tau must be positive"));
    }
    let cfg = StudyConfig { n: a.n, reps: a.reps, tau: a.tau, param_seed: a.param_seed, seed: a.seed, truth_draws: a.truth_draws };
    let res = run_study_with(&cfg, draw_params(a.param_seed, a.tau));
    let mut text = String::from(
        "row,n_ok,n_failed,flag,mean,truth,bias,bias_x100,mc_se,bias_z,truth_mc,bias_z_mc,variance_n,lilliefors_p\n",
    );
    for r in &res.rows {
        writeln!(
            text,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.label,
            r.n_ok,
            r.n_failed,
            if r.n_failed > 0 { "partial" } else { "ok" },
            num(r.mean),
            num(res.truth),
            num(r.bias),
            num(100.0 * r.bias),
            num(r.mc_se),
            num(r.bias_z),
            num(res.truth_mc),
            num(r.bias_z_mc),
            num(r.variance_n),
            r.lilliefors_p.map_or("insufficient".to_string(), num)
        )
        .unwrap();
    }
    emit(a.out.as_deref(), &text, &mut m)?;
    if a.out.is_some() {
        print!("{}", format_study(&res));
    }
    m.note("truth", res.truth);
    m.note("truth_mc", (res.truth_mc, res.truth_mc_se));
    m.finish(manifest_path(explicit, a.out.as_deref()).as_deref())?;
    Ok(())
}

fn coverage(a: &CoverageArgs, explicit: Option<&Path>) -> Result<(), CliError> {
    let mut m = ManifestBuilder::new("coverage", a);
    m.seed("data", a.seed);
    m.seed("params", a.param_seed);
    if !(0.0 < a.level && a.level < 1.0) || a.replicates < 2 || a.datasets == 0 {
        return Err(CliError::validation("need 0 < level < 1, B >= 2 and at least one dataset"));
    }
    let kinds = parse_estimators(&a.estimator)?;
    let cfg = CoverageConfig {
        n: a.n,
        datasets: a.datasets,
        replicates: a.replicates,
        tau: a.tau,
        level: a.level,
        param_seed: a.param_seed,
        seed: a.seed,
        truth_draws: a.truth_draws,
    };
    let res = coverage_study(&cfg, &kinds);
    let mut text = String::from("estimator,evaluated,covered,coverage,covered_mc,mean_se,empirical_sd,truth,truth_mc\n");
    for s in &res.summaries {
        writeln!(
            text,
            "{},{},{},{},{},{},{},{},{}",
            s.estimator,
            s.evaluated,
            s.covered,
            num(s.coverage),
            s.covered_mc,
            num(s.mean_se),
            num(s.empirical_sd),
            num(res.truth),
            num(res.truth_mc)
        )
        .unwrap();
    }
    emit(a.out.as_deref(), &text, &mut m)?;
    m.note("failed_datasets", res.failed_datasets);
    m.finish(manifest_path(explicit, a.out.as_deref()).as_deref())?;
    Ok(())
}

fn ingest(a: &IngestArgs, explicit: Option<&Path>) -> Result<(), CliError> {
    let mut m = ManifestBuilder::new("ingest-agg", a);
    m.input(&a.input)?;
    let mut schema = match &a.schema {
        Some(p) => {
            m.input(p)?;
            SchemaMap::from_json(&std::fs::read_to_string(p)?)?
        }
        None => SchemaMap::default(),
    };
    if a.raw_case_change {
        schema.log_case_change = false;
    }
    let agg = ingest_agg(&a.input, &schema)?;
    let mut buf = Vec::new();
    write_panel_csv_to(&agg.panel, &mut buf)?;
    emit(a.out.as_deref(), std::str::from_utf8(&buf).expect("csv is utf-8"), &mut m)?;
    m.note("units", agg.panel.n_units());
    m.note("weeks", agg.panel.n_times());
    m.note("case_change_transform", agg.transform);
    m.note("total_population", agg.populations.iter().sum::<u64>());
    m.finish(manifest_path(explicit, a.out.as_deref()).as_deref())?;
    Ok(())
}

fn simulate_agg(a: &SimulateAggArgs, explicit: Option<&Path>) -> Result<(), CliError> {
    let mut m = ManifestBuilder::new("simulate-agg", a);
    m.seed("data", a.seed);
    let mut cfg = PlantedConfig::default();
    if let Some(d) = a.delta {
        if !(0.0..1.0).contains(&d) {
            return Err(CliError::validation("--delta must lie in [0, 1)"));
        }
        cfg.delta = d;
    }
    let s = simulate_planted(&cfg, a.seed);
    build_agg_panel(&s.rows, true).map_err(|e| CliError::internal(format!("simulated counts fail validation: {e}")))?;
    let mut buf = Vec::new();
    write_agg_csv(&s.rows, &mut buf)?;
    std::fs::write(&a.out, buf)?;
    m.output(&a.out)?;
    let mut side = a.out.as_os_str().to_owned();
    side.push(".truth.json");
    let side = PathBuf::from(side);
    std::fs::write(&side, serde_json::to_string_pretty(&serde_json::json!({ "seed": a.seed, "config": cfg, "planted_lives": s.planted_lives }))? + "\n")?;
    m.output(&side)?;
    m.note("planted_lives", s.planted_lives);
    m.finish(manifest_path(explicit, Some(&a.out)).as_deref())?;
    Ok(())
}

#[derive(Serialize)]
struct OracleReport {
    name: String,
    conforming: bool,
    psi: Vec<f64>,
    mu: Vec<f64>,
    max_gap: f64,
    pass: bool,
}

/// Identification must hold to 1e-12 on conforming fixtures; violation
/// fixtures are expected to show a gap above 1e-3.
fn oracle_check(a: &OracleArgs, explicit: Option<&Path>) -> Result<(), CliError> {
    let mut m = ManifestBuilder::new("oracle-check", a);
    let fixtures: Vec<OracleFixture> = if a.fixture.is_empty() {
        shipped_fixtures()
    } else {
        a.fixture
            .iter()
            .map(|p| {
                m.input(p)?;
                Ok(OracleFixture::from_json(&std::fs::read_to_string(p)?)?)
            })
            .collect::<Result<_, CliError>>()?
    };
    let mut reports = Vec::new();
    for f in &fixtures {
        let r = f.regime();
        let psi: Vec<f64> = (0..=f.dgp.tau).map(|t| f.dgp.exact_psi(&r, t)).collect::<Result<_, _>>()?;
        let mu: Vec<f64> = (0..=f.dgp.tau).map(|t| f.dgp.exact_mu(&r, t)).collect::<Result<_, _>>()?;
        let max_gap = psi.iter().zip(&mu).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        let pass = if f.conforming { max_gap < 1e-12 } else { max_gap > 1e-3 };
        reports.push(OracleReport { name: f.name.clone(), conforming: f.conforming, psi, mu, max_gap, pass });
    }
    emit(a.out.as_deref(), &(serde_json::to_string_pretty(&reports)? + "\n"), &mut m)?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.pass).map(|r| r.name.as_str()).collect();
    m.note("failed", &failed);
    m.finish(manifest_path(explicit, a.out.as_deref()).as_deref())?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::internal(format!("identification check failed for {failed:?}")))
    }
}

use ptgformula::agg::{
    agg_specs, build_agg_panel, ingest_agg, ingest_agg_from, lives_saved, policy_regime, sample_rows, simulate_planted, to_rate_panel,
    write_agg_csv, AggError, PlantedConfig, SchemaMap, LOG_W, RAW_W,
};
use ptgformula::bootstrap::{bootstrap_many, BootstrapConfig, BootstrapMode};
use ptgformula::estimators::{estimate_psi, estimate_psi_many, Averaging, EstimatorKind};
use ptgformula::panel::validate_staggered;

const SAMPLE: &str = include_str!("../../../data/sample_agg.csv");

fn sample() -> ptgformula::agg::AggPanel {
    ingest_agg_from(SAMPLE.as_bytes(), &SchemaMap::default()).unwrap()
}

#[test]
fn shipped_sample_has_the_expected_shape() {
    let a = sample();
    assert_eq!(a.panel.n_units(), 43);
    assert_eq!(a.panel.n_times(), 12);
    assert_eq!(a.panel.covariate_names(), [LOG_W.to_string()]);
    assert_eq!(a.transform, "log");
    validate_staggered(&a.panel, &policy_regime(12)).unwrap();
    for (i, &n) in a.populations.iter().enumerate() {
        assert_eq!(a.panel.trials().unwrap()[i], n);
        assert_eq!(a.panel.unit_weight(i), 1.0 / n as f64);
    }
    let first: Vec<&str> = SAMPLE.lines().nth(1).unwrap().split(',').collect();
    let w: f64 = first[5].parse().unwrap();
    assert_eq!(a.panel.covariate(0, 0, 0), w.ln());
}

#[test]
fn shipped_sample_is_reproducible_from_its_seed() {
    let mut buf = Vec::new();
    write_agg_csv(&sample_rows().rows, &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), SAMPLE);
}

#[test]
fn schema_map_binds_renamed_columns() {
    let renamed = SAMPLE.replacen("unit_id,time,deaths,population,policy,case_change", "state,week,d,pop,order,cases", 1);
    let schema = SchemaMap::from_json(
        r#"{"unit_id":"state","time":"week","deaths":"d","population":"pop","policy":"order","case_change":"cases"}"#,
    )
    .unwrap();
    let a = ingest_agg_from(renamed.as_bytes(), &schema).unwrap();
    assert_eq!(a.panel, sample().panel);
    assert!(matches!(ingest_agg_from(renamed.as_bytes(), &SchemaMap::default()), Err(AggError::SchemaMismatch(_))));
    assert!(SchemaMap::from_json(r#"{"colour":"x"}"#).is_err());
}

#[test]
fn ingest_reads_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("agg.csv");
    std::fs::write(&path, SAMPLE).unwrap();
    assert_eq!(ingest_agg(&path, &SchemaMap::default()).unwrap().panel, sample().panel);
    assert!(matches!(ingest_agg(dir.path().join("missing.csv"), &SchemaMap::default()), Err(AggError::Io(_))));
}

const HEADER: &str = "unit_id,time,deaths,population,policy,case_change\n";

fn ingest(body: &str) -> Result<ptgformula::agg::AggPanel, AggError> {
    ingest_agg_from(format!("{HEADER}{body}").as_bytes(), &SchemaMap::default())
}

#[test]
fn count_violations_are_rejected() {
    let bad = ["A,0,11,10,1,5\nA,1,1,10,1,5\n", "A,0,-1,10,1,5\nA,1,1,10,1,5\n", "A,0,1.5,10,1,5\nA,1,1,10,1,5\n", "A,0,1,0,1,5\n"];
    for body in bad {
        assert!(matches!(ingest(body), Err(AggError::NegativeCount { .. })), "{body}");
    }
    assert!(matches!(ingest("A,0,1,10,1,5\nA,1,1,11,1,5\n"), Err(AggError::SchemaMismatch(_))));
    assert!(matches!(ingest("A,0,1,10,1,x\n"), Err(AggError::SchemaMismatch(_))));
}

#[test]
fn time_must_be_contiguous_from_zero() {
    assert!(matches!(ingest("A,0,1,10,1,5\nA,2,1,10,1,5\n"), Err(AggError::NonContiguousTime { .. })));
    assert!(matches!(ingest("A,1,1,10,1,5\nA,2,1,10,1,5\n"), Err(AggError::NonContiguousTime { .. })));
    assert!(matches!(ingest("A,0,1,10,1,5\nA,1,1,10,1,5\nB,0,1,10,1,5\n"), Err(AggError::NonContiguousTime { .. })));
    assert!(matches!(ingest("A,-1,1,10,1,5\n"), Err(AggError::NonContiguousTime { .. })));
    // Row order does not matter.
    let a = ingest("A,1,2,10,1,5\nB,0,1,10,1,5\nA,0,1,10,1,4\nB,1,3,10,0,6\n").unwrap();
    assert_eq!(a.panel.unit_ids(), ["A".to_string(), "B".to_string()]);
    assert_eq!(a.panel.outcome(0, 1), 2.0);
    assert_eq!(a.panel.covariate(0, 0, 0), 4f64.ln());
}

#[test]
fn nonpositive_case_change_needs_explicit_preprocessing() {
    let body = "A,0,1,10,1,5\nA,1,1,10,1,0\n";
    assert!(matches!(ingest(body), Err(AggError::NonpositiveCaseChange { time: 1, .. })));
    let raw = SchemaMap { log_case_change: false, ..SchemaMap::default() };
    let a = ingest_agg_from(format!("{HEADER}{body}").as_bytes(), &raw).unwrap();
    assert_eq!(a.panel.covariate_names(), [RAW_W.to_string()]);
    assert_eq!(a.panel.covariate(0, 1, 0), 0.0);
    assert_eq!(a.transform, "identity");
}

#[test]
fn counts_and_rates_give_identical_estimates() {
    let a = sample();
    let rates = to_rate_panel(&a.panel).unwrap();
    assert!(rates.trials().is_none());
    let specs = agg_specs(LOG_W, Averaging::FitWeights);
    let r = policy_regime(12);
    let counts = estimate_psi_many(&a.panel, &r, &EstimatorKind::ALL, &specs, None).unwrap();
    let rate_est = estimate_psi_many(&rates, &r, &EstimatorKind::ALL, &specs, None).unwrap();
    for (c, q) in counts.iter().zip(&rate_est) {
        for t in 0..12 {
            assert!((c.psi[t] - q.psi[t]).abs() < 1e-10, "{} t={t} {} {}", c.estimator, c.psi[t], q.psi[t]);
            assert!((c.natural_course[t] - q.natural_course[t]).abs() < 1e-15);
        }
    }
}

#[test]
fn both_averaging_conventions_are_available() {
    let a = sample();
    let r = policy_regime(12);
    let state = estimate_psi(&a.panel, &r, EstimatorKind::Ice, &agg_specs(LOG_W, Averaging::FitWeights), None).unwrap();
    let person = estimate_psi(&a.panel, &r, EstimatorKind::Ice, &agg_specs(LOG_W, Averaging::Trials), None).unwrap();
    let n = a.panel.n_units() as f64;
    let total: f64 = a.populations.iter().map(|&p| p as f64).sum();
    for t in 0..12 {
        let state_mean: f64 = (0..a.panel.n_units()).map(|i| a.panel.response(i, t)).sum::<f64>() / n;
        let person_mean: f64 = (0..a.panel.n_units()).map(|i| a.panel.outcome(i, t)).sum::<f64>() / total;
        assert!((state.natural_course[t] - state_mean).abs() < 1e-15);
        assert!((person.natural_course[t] - person_mean).abs() < 1e-15);
    }
    assert_ne!(state.psi[11], person.psi[11]);
}

#[test]
fn lives_saved_is_zero_without_contrast_and_linear_in_it() {
    let a = sample();
    let cfg = BootstrapConfig::new(BootstrapMode::MultinomialCounts, 20, 3);
    let specs = agg_specs(LOG_W, Averaging::Trials);
    let boot = bootstrap_many(&a.panel, &policy_regime(12), &[EstimatorKind::Ice], &specs, 11, &cfg).unwrap().remove(0);
    let mut flat = boot.estimate.clone();
    flat.psi = flat.natural_course.clone();
    assert_eq!(lives_saved(&flat, Some(&boot), &a.populations).unwrap().point, 0.0);

    let base = lives_saved(&boot.estimate, Some(&boot), &a.populations).unwrap();
    let mut doubled = boot.estimate.clone();
    doubled.psi = doubled.psi.iter().zip(&doubled.natural_course).map(|(p, n)| n - 2.0 * (n - p)).collect();
    let twice = lives_saved(&doubled, Some(&boot), &a.populations).unwrap();
    assert!((twice.point - 2.0 * base.point).abs() < 1e-6 * base.point.abs().max(1.0));
    assert!((base.by_week.iter().sum::<f64>() - base.point).abs() < 1e-9);
    assert!(base.ci.0 < base.point && base.point < base.ci.1);
    assert!(matches!(lives_saved(&boot.estimate, None, &a.populations), Err(AggError::MissingBootstrap)));
}

#[test]
fn planted_effect_is_recovered_on_a_few_seeds() {
    let cfg = PlantedConfig::default();
    let specs = agg_specs(LOG_W, Averaging::Trials);
    let mut covered = 0;
    for seed in 0..5 {
        let s = simulate_planted(&cfg, seed);
        let a = build_agg_panel(&s.rows, true).unwrap();
        let bc = BootstrapConfig::new(BootstrapMode::MultinomialCounts, 60, 1000 + seed);
        let b = bootstrap_many(&a.panel, &policy_regime(12), &[EstimatorKind::Tmle], &specs, 11, &bc).unwrap().remove(0);
        let l = lives_saved(&b.estimate, Some(&b), &a.populations).unwrap();
        covered += usize::from(l.ci.0 <= s.planted_lives && s.planted_lives <= l.ci.1);
    }
    assert!(covered >= 4, "covered {covered} of 5");
}

#[test]
fn planted_truth_counts_off_policy_person_weeks() {
    let cfg = PlantedConfig { delta: 1e-3, ..PlantedConfig::default() };
    let s = simulate_planted(&cfg, 9);
    let off: f64 = s.rows.iter().filter(|r| r.policy == 0).map(|r| r.population as f64).sum();
    assert!((s.planted_lives - 1e-3 * off).abs() < 1e-6 * s.planted_lives);
    assert_eq!(s.rows.len(), 43 * 12);
    assert!(s.rows.iter().filter(|r| r.time == 0).all(|r| r.policy == 1));
}

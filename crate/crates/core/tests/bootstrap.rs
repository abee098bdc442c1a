use ptgformula::agg::{agg_specs, build_agg_panel, policy_regime, simulate_planted, PlantedConfig, LOG_W};
use ptgformula::bootstrap::{bootstrap_many, bootstrap_psi, resample, BootstrapConfig, BootstrapError, BootstrapMode};
use ptgformula::dgp::{draw_params, simulate_observed};
use ptgformula::estimators::{Averaging, EstimationSpecs, EstimatorKind, StepSpecs};
use ptgformula::glm::{ModelSpec, Term};
use ptgformula::panel::{LongPanel, PanelParts, Regime};
use ptgformula::stats::normal_quantile;
use ptgformula::study::{never_treated, study_specs, DEFAULT_PARAM_SEED};

fn sim(n: usize, seed: u64) -> LongPanel<f64> {
    simulate_observed(n, &draw_params(DEFAULT_PARAM_SEED, 5), seed)
}

fn agg(seed: u64) -> ptgformula::agg::AggPanel {
    build_agg_panel(&simulate_planted(&PlantedConfig::default(), seed).rows, true).unwrap()
}

#[test]
fn constant_outcomes_have_zero_standard_error() {
    let p = sim(500, 1);
    let mut parts = p.into_parts();
    parts.outcome.iter_mut().for_each(|y| *y = 2.5);
    let p = LongPanel::from_parts(parts).unwrap();
    let cfg = BootstrapConfig::new(BootstrapMode::UnitResample, 20, 3);
    let res = bootstrap_many(&p, &never_treated(6), &EstimatorKind::ALL, &study_specs(6, true, true), 5, &cfg).unwrap();
    for r in res {
        for (t, se) in r.estimate.se.unwrap().iter().enumerate() {
            assert!(se.abs() < 1e-12, "{} t={t} se={se}", r.estimate.estimator);
        }
    }
}

#[test]
fn wald_interval_uses_replicate_sd() {
    let p = sim(1500, 2);
    let mut cfg = BootstrapConfig::new(BootstrapMode::UnitResample, 30, 5);
    cfg.level = 0.9;
    cfg.percentile = true;
    let r = bootstrap_psi(&p, &never_treated(6), EstimatorKind::Ice, &study_specs(6, true, true), 5, &cfg).unwrap();
    let z = normal_quantile(0.95);
    let se = r.estimate.se.as_ref().unwrap();
    assert_eq!(r.psi_draws.len(), 30);
    assert_eq!(r.failed, 0);
    for t in 0..=5 {
        let col: Vec<f64> = r.psi_draws.iter().map(|d| d[t]).collect();
        assert!((ptgformula::stats::std_dev(&col) - se[t]).abs() < 1e-15);
        assert!((r.estimate.ci_lo.as_ref().unwrap()[t] - (r.estimate.psi[t] - z * se[t])).abs() < 1e-12);
        assert!((r.estimate.ci_hi.as_ref().unwrap()[t] - (r.estimate.psi[t] + z * se[t])).abs() < 1e-12);
        let (lo, hi) = r.percentile.as_ref().unwrap();
        assert!(lo[t] <= hi[t]);
    }
    assert!(se[5] > 0.0);
}

#[test]
fn replicates_are_independent_of_thread_count() {
    let p = sim(800, 3);
    let cfg = BootstrapConfig::new(BootstrapMode::UnitResample, 16, 11);
    let specs = study_specs(6, true, true);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| bootstrap_many(&p, &never_treated(6), &EstimatorKind::ALL, &specs, 5, &cfg).unwrap())
    };
    let a = run(1);
    let b = run(3);
    assert_eq!(a, b);
    let c = bootstrap_many(&p, &never_treated(6), &EstimatorKind::ALL, &specs, 5, &BootstrapConfig { seed: 12, ..cfg.clone() }).unwrap();
    assert_ne!(a[0].psi_draws, c[0].psi_draws);
}

#[test]
fn unit_resampling_keeps_whole_trajectories() {
    let p = sim(60, 4);
    let rep = resample(&p, BootstrapMode::UnitResample, 9, 0).unwrap();
    assert_eq!(rep.n_units(), p.n_units());
    for i in 0..rep.n_units() {
        let id = rep.unit_ids()[i].split('#').next().unwrap();
        let src = p.unit_ids().iter().position(|u| u == id).unwrap();
        for t in 0..p.n_times() {
            assert_eq!(rep.treatment(i, t), p.treatment(src, t));
            assert_eq!(rep.outcome(i, t), p.outcome(src, t));
            for c in 0..2 {
                assert_eq!(rep.covariate(i, t, c), p.covariate(src, t, c));
            }
        }
    }
    assert_eq!(rep, resample(&p, BootstrapMode::UnitResample, 9, 0).unwrap());
    assert_ne!(rep, resample(&p, BootstrapMode::UnitResample, 9, 1).unwrap());
}

#[test]
fn multinomial_counts_respect_each_population() {
    let a = agg(1);
    for b in 0..25 {
        let rep = resample(&a.panel, BootstrapMode::MultinomialCounts, 4, b).unwrap();
        for (i, &n_s) in a.populations.iter().enumerate() {
            let deaths: f64 = (0..rep.n_times()).map(|t| rep.outcome(i, t)).sum();
            let survivors = n_s as f64 - deaths;
            assert!(survivors >= 0.0);
            assert_eq!(deaths + survivors, n_s as f64);
            for t in 0..rep.n_times() {
                assert_eq!(rep.treatment(i, t), a.panel.treatment(i, t));
                assert_eq!(rep.covariate(i, t, 0), a.panel.covariate(i, t, 0));
                assert_eq!(rep.outcome(i, t).fract(), 0.0);
            }
        }
    }
}

#[test]
fn multinomial_bootstrap_fills_every_week() {
    let a = agg(2);
    let cfg = BootstrapConfig::new(BootstrapMode::MultinomialCounts, 40, 8);
    let res = bootstrap_many(&a.panel, &policy_regime(12), &EstimatorKind::ALL, &agg_specs(LOG_W, Averaging::Trials), 11, &cfg).unwrap();
    for r in res {
        assert_eq!(r.estimate.se.as_ref().unwrap().len(), 12);
        assert!(r.estimate.se.as_ref().unwrap()[1..].iter().all(|s| *s > 0.0));
        assert_eq!(r.mode, BootstrapMode::MultinomialCounts);
    }
}

#[test]
fn multinomial_mode_needs_trials() {
    let p = sim(100, 5);
    let cfg = BootstrapConfig::new(BootstrapMode::MultinomialCounts, 5, 1);
    let err = bootstrap_psi(&p, &never_treated(6), EstimatorKind::Ice, &study_specs(6, true, true), 5, &cfg).unwrap_err();
    assert_eq!(err, BootstrapError::MissingTrials);
}

#[test]
fn invalid_configurations_are_rejected() {
    let p = sim(100, 6);
    let specs = study_specs(6, true, true);
    for cfg in [
        BootstrapConfig::new(BootstrapMode::UnitResample, 1, 1),
        BootstrapConfig { level: 1.0, ..BootstrapConfig::new(BootstrapMode::UnitResample, 10, 1) },
    ] {
        assert!(matches!(bootstrap_psi(&p, &never_treated(6), EstimatorKind::Ice, &specs, 5, &cfg), Err(BootstrapError::InvalidConfig(_))));
    }
}

#[test]
fn frequent_replicate_failures_abort() {
    // One unit stays on the plan through t = 1; it is absent from about a
    // third of the resamples, which then have nobody to fit on.
    let n = 30;
    let a: Vec<u8> = (0..n).flat_map(|i| [1, u8::from(i == 0)]).collect();
    let p = LongPanel::from_parts(PanelParts {
        unit_ids: (0..n).map(|i| format!("u{i}")).collect(),
        n_times: 2,
        covariate_names: vec![],
        covariates: vec![],
        treatment: a,
        outcome: (0..2 * n).map(|v| v as f64).collect(),
        unit_weight: None,
        trials: None,
    })
    .unwrap();
    let specs = EstimationSpecs::new(StepSpecs::Uniform(ModelSpec::gaussian(vec![Term::Intercept])));
    let cfg = BootstrapConfig::new(BootstrapMode::UnitResample, 100, 2);
    match bootstrap_psi(&p, &Regime::always(1, 2), EstimatorKind::Ice, &specs, 1, &cfg) {
        Err(BootstrapError::TooManyFailedReplicates { failed, replicates: 100 }) => assert!(failed > 10),
        other => panic!("expected failure, got {other:?}"),
    }
}

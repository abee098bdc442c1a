use ptgformula::estimators::{
    compute_iptw_weights, estimate_phi_iptw, estimate_phi_ice, estimate_psi, estimate_psi_many, fit_treatment_models,
    lagged_outcome_specs, positivity_probe, EstimationError, EstimationSpecs, EstimatorKind, StepSpecs, Truncation,
    Workspace,
};
use ptgformula::glm::{ModelSpec, Term};
use ptgformula::oracle::{plugin_phi, plugin_psi, shipped_fixtures};
use ptgformula::panel::{LongPanel, PanelError, PanelParts, Regime};

fn panel(a: &[&[u8]], w: &[&[f64]], y: &[&[f64]]) -> LongPanel<f64> {
    LongPanel::from_parts(PanelParts {
        unit_ids: (0..a.len()).map(|i| format!("u{i}")).collect(),
        n_times: a[0].len(),
        covariate_names: vec!["W".into()],
        covariates: w.iter().flat_map(|r| r.iter().copied()).collect(),
        treatment: a.iter().flat_map(|r| r.iter().copied()).collect(),
        outcome: y.iter().flat_map(|r| r.iter().copied()).collect(),
        unit_weight: None,
        trials: None,
    })
    .unwrap()
}

fn saturated_specs(levels: usize, n_times: usize) -> EstimationSpecs {
    let lags = |m: usize| (0..=m).collect::<Vec<_>>();
    let outcome = StepSpecs::PerStep((0..n_times).map(|m| ModelSpec::gaussian(Term::saturated("W", &lags(m), levels))).collect());
    let mut specs = EstimationSpecs::new(outcome);
    specs.denominator =
        StepSpecs::PerStep((0..n_times).map(|k| ModelSpec::logistic(Term::saturated("W", &lags(k), levels))).collect());
    specs
}

#[test]
fn saturated_estimators_match_plugin_g_formula() {
    for f in shipped_fixtures().iter().filter(|f| f.conforming) {
        let levels = f.dgp.w_support[0].len();
        if f.dgp.w_support.iter().any(|s| s.len() != levels) {
            continue;
        }
        let r = f.regime();
        let p = f.dgp.simulate(20_000, 21);
        let specs = saturated_specs(levels, p.n_times());
        let tau = p.tau();
        let ws = Workspace::new(&p, &r, &specs, &EstimatorKind::ALL, tau).unwrap();
        for k in 0..=tau {
            for j in [k.checked_sub(1), Some(k)].into_iter().flatten() {
                let truth = plugin_phi(&p, &r, j, k).unwrap();
                let y = ws.response(j);
                let iptw = ws.phi_iptw(&y, k).unwrap();
                let ice = ws.phi_ice(&y, k).unwrap();
                let mut trace = Vec::new();
                let tmle = ws.phi_tmle(&y, j, k, &mut trace, &mut Vec::new()).unwrap();
                for (name, v) in [("iptw", iptw), ("ice", ice), ("tmle", tmle)] {
                    assert!((v - truth).abs() < 1e-8, "{} {name} phi({j},{k}) {v} vs {truth}", f.name);
                }
                assert!(trace.iter().all(|s| s.epsilon.abs() < 1e-8 && s.score.abs() < 1e-8));
            }
        }
        let est = estimate_psi_many(&p, &r, &EstimatorKind::ALL, &specs, None).unwrap();
        let psi = plugin_psi(&p, &r, tau).unwrap();
        for e in est {
            assert!((e.psi[tau] - psi).abs() < 1e-8, "{} {}", f.name, e.estimator);
        }
    }
}

#[test]
fn hand_built_ice_nested_means() {
    // Units adherent through 1: 0, 1, 2. Step 1 regresses Y1 on (1, W1, W0),
    // exactly interpolating (2, 4, 6) and predicting 8 for unit 3. Step 0
    // averages within W0: (3, 3, 7, 7), so phi(1,1) = 5.
    let p = panel(
        &[&[1, 1], &[1, 1], &[1, 1], &[1, 0]],
        &[&[0.0, 0.0], &[0.0, 1.0], &[1.0, 0.0], &[1.0, 1.0]],
        &[&[0.0, 2.0], &[0.0, 4.0], &[0.0, 6.0], &[0.0, 9.0]],
    );
    let specs = StepSpecs::PerStep(vec![
        ModelSpec::gaussian(vec![Term::Intercept, Term::covariate("W", 0)]),
        ModelSpec::gaussian(vec![Term::Intercept, Term::covariate("W", 0), Term::covariate("W", 1)]),
    ]);
    let v = estimate_phi_ice(&p, &Regime::always(1, 2), &specs, 1, 1).unwrap();
    assert!((v - 5.0).abs() < 1e-12, "{v}");
}

#[test]
fn baseline_cells_are_plain_means() {
    let f = &shipped_fixtures()[0];
    let p = f.dgp.simulate(500, 4);
    let r = f.regime();
    let mean0 = p.response_column(0).iter().sum::<f64>() / 500.0;
    let ice = estimate_phi_ice(&p, &r, &StepSpecs::Uniform(ModelSpec::gaussian(vec![Term::Intercept])), 0, 0).unwrap();
    assert!((ice - mean0).abs() < 1e-12);
    let one = ModelSpec::logistic(vec![Term::Intercept]).into();
    let fits = fit_treatment_models(&p, &r, &one, &one, false).unwrap();
    let iptw = estimate_phi_iptw(&p, &r, &fits, 0, 0).unwrap();
    assert!((iptw - mean0).abs() < 1e-12);
}

#[test]
fn identical_numerator_and_denominator_give_unit_weights() {
    let f = &shipped_fixtures()[2];
    let p = f.dgp.simulate(800, 5);
    let r = f.regime();
    let one: StepSpecs = ModelSpec::logistic(vec![Term::Intercept]).into();
    for pooled in [false, true] {
        let fits = fit_treatment_models(&p, &r, &one, &one, pooled).unwrap();
        for k in 0..p.n_times() {
            assert!(compute_iptw_weights(&p, &r, &fits, k).unwrap().iter().all(|&w| w == 1.0));
        }
    }
}

#[test]
fn single_period_weight_example() {
    // At k = 1: W = 1 units are treated 4/5, W = 0 units 1/5, overall 1/2.
    let mut a: Vec<Vec<u8>> = Vec::new();
    let mut w: Vec<Vec<f64>> = Vec::new();
    for i in 0..10 {
        let wi = f64::from(u8::from(i < 5));
        let treated = if i < 5 { i < 4 } else { i == 5 };
        a.push(vec![1, u8::from(treated)]);
        w.push(vec![wi, wi]);
    }
    let ar: Vec<&[u8]> = a.iter().map(|v| v.as_slice()).collect();
    let wr: Vec<&[f64]> = w.iter().map(|v| v.as_slice()).collect();
    let y: Vec<&[f64]> = vec![&[0.0, 0.0]; 10];
    let p = panel(&ar, &wr, &y);
    let r = Regime::always(1, 2);
    let num: StepSpecs = ModelSpec::logistic(vec![Term::Intercept]).into();
    let den: StepSpecs = ModelSpec::logistic(vec![Term::Intercept, Term::covariate("W", 0)]).into();
    let fits = fit_treatment_models(&p, &r, &num, &den, false).unwrap();
    let pi = compute_iptw_weights(&p, &r, &fits, 1).unwrap();
    assert!((pi[0] - 0.625).abs() < 1e-10, "{}", pi[0]);
    assert!((fits.follow_probability(1, 0) - 0.8).abs() < 1e-10);
}

fn continuous_panel(n: usize, seed: u64) -> LongPanel<f64> {
    use rand::Rng;
    let mut rng = ptgformula::rng::stream(seed, 0);
    let mut a = Vec::new();
    let mut w = Vec::new();
    let mut y = Vec::new();
    for _ in 0..n {
        let mut on = true;
        for t in 0..4 {
            let wt: f64 = rng.random::<f64>() * 2.0 - 1.0;
            if t > 0 && on {
                on = rng.random::<f64>() < 0.2 + 0.6 / (1.0 + (-wt).exp());
            }
            a.push(u8::from(on));
            w.push(wt);
            y.push(wt + 0.5 * t as f64 + f64::from(u8::from(on)) + rng.random::<f64>());
        }
    }
    LongPanel::from_parts(PanelParts {
        unit_ids: (0..n).map(|i| i.to_string()).collect(),
        n_times: 4,
        covariate_names: vec!["W".into()],
        covariates: w,
        treatment: a,
        outcome: y,
        unit_weight: None,
        trials: None,
    })
    .unwrap()
}

fn smooth_specs() -> EstimationSpecs {
    let mut s = EstimationSpecs::new(StepSpecs::Uniform(ModelSpec::gaussian(vec![
        Term::Intercept,
        Term::covariate("W", 0),
        Term::power("W", 0, 2),
    ])));
    s.denominator = ModelSpec::logistic(vec![Term::Intercept, Term::covariate("W", 0)]).into();
    s
}

#[test]
fn static_and_constant_dynamic_regimes_agree_bitwise() {
    let p = continuous_panel(600, 9);
    let st = Regime::always(1, 4);
    let dy = st.as_dynamic();
    let specs = smooth_specs();
    for pooled in [false, true] {
        let mut s = specs.clone();
        s.pooled_treatment = pooled;
        let a = estimate_psi_many(&p, &st, &EstimatorKind::ALL, &s, None).unwrap();
        let b = estimate_psi_many(&p, &dy, &EstimatorKind::ALL, &s, None).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn tmle_scores_vanish_after_each_fluctuation() {
    let p = continuous_panel(1500, 10);
    let r = Regime::always(1, 4);
    let e = estimate_psi(&p, &r, EstimatorKind::Tmle, &smooth_specs(), None).unwrap();
    // (k, k) cells take k + 1 steps, (k - 1, k) cells too: 10 + 9.
    assert_eq!(e.tmle_trace.len(), 19);
    for s in &e.tmle_trace {
        assert!(s.score.abs() < 1e-8, "{s:?}");
    }
    assert!(e.tmle_trace.iter().any(|s| s.epsilon.abs() > 1e-6));
}

#[test]
fn contrast_is_psi_minus_natural_course() {
    let p = continuous_panel(400, 11);
    let r = Regime::always(1, 4);
    for e in estimate_psi_many(&p, &r, &EstimatorKind::ALL, &smooth_specs(), None).unwrap() {
        for t in 0..4 {
            assert_eq!(e.contrast[t], e.psi[t] - e.natural_course[t]);
        }
    }
}

#[test]
fn truncation_clips_extreme_weights() {
    let p = continuous_panel(800, 12);
    let r = Regime::always(1, 4);
    let mut specs = smooth_specs();
    let base = Workspace::new(&p, &r, &specs, &[EstimatorKind::Iptw], 3).unwrap();
    specs.truncation = Some(Truncation { level: 0.05 });
    let cut = Workspace::new(&p, &r, &specs, &[EstimatorKind::Iptw], 3).unwrap();
    let adherent = base.adherence().adherent_units(Some(3));
    let (w0, w1) = (base.iptw_weights(3).unwrap(), cut.iptw_weights(3).unwrap());
    let max = |w: &[f64]| adherent.iter().map(|&i| w[i]).fold(f64::MIN, f64::max);
    assert!(max(&w1) < max(&w0));
    let e = estimate_psi(&p, &r, EstimatorKind::Iptw, &specs, None).unwrap();
    assert_eq!(e.truncation, Some(Truncation { level: 0.05 }));
}

#[test]
fn input_errors_are_reported() {
    let z: [&[f64]; 2] = [&[0.0, 0.0]; 2];
    let p = panel(&[&[1, 1], &[0, 0]], &z, &z);
    let r = Regime::always(1, 2);
    let specs = smooth_specs();
    assert!(matches!(
        estimate_psi(&p, &r, EstimatorKind::Ice, &specs, None),
        Err(EstimationError::Panel(PanelError::BaselineDeviation(ids))) if ids == vec!["u1".to_string()]
    ));
    let lone = panel(&[&[1, 1]], &[&[0.0, 0.0]], &[&[0.0, 0.0]]);
    assert!(matches!(
        estimate_psi(&lone, &r, EstimatorKind::Iptw, &specs, None),
        Err(EstimationError::InsufficientAdherent(1))
    ));
    let p = continuous_panel(200, 13);
    let mut s = smooth_specs();
    s.tmle.bounds = Some((0.0, 1.0));
    assert!(matches!(
        estimate_psi(&p, &Regime::always(1, 4), EstimatorKind::Tmle, &s, None),
        Err(EstimationError::InvalidBounds(_))
    ));
    assert!(matches!(
        estimate_psi(&p, &Regime::always(1, 4), EstimatorKind::Ice, &s, Some(4)),
        Err(EstimationError::TimeOutOfRange { .. })
    ));
}

#[test]
fn lagged_specs_have_expected_shape() {
    let StepSpecs::PerStep(v) = lagged_outcome_specs(3, true) else { panic!() };
    assert_eq!(v[0].n_columns(), 4);
    assert_eq!(v[1].n_columns(), 7);
    let StepSpecs::PerStep(v) = lagged_outcome_specs(3, false) else { panic!() };
    assert_eq!(v[2].n_columns(), 5);
}

#[test]
fn positivity_probe_flags_thin_strata() {
    let p = continuous_panel(500, 14);
    let r = Regime::always(1, 4);
    let num: StepSpecs = ModelSpec::logistic(vec![Term::Intercept]).into();
    let den: StepSpecs = ModelSpec::logistic(vec![Term::Intercept, Term::covariate("W", 0)]).into();
    let fits = fit_treatment_models(&p, &r, &num, &den, false).unwrap();
    assert!(positivity_probe(&p, &r, &fits, 0.01).is_empty());
    assert!(positivity_probe(&p, &r, &fits, 0.0).is_empty());

    // Of the W = 1 units still treated at time 1, only one stays on at time 2.
    let mut a = Vec::new();
    let mut w = Vec::new();
    for i in 0..800 {
        let wi = f64::from(u8::from(i % 2 == 0));
        let stays = if wi == 1.0 { i == 0 } else { i % 3 != 1 };
        let a1 = i % 5 != 1;
        a.push(vec![1, u8::from(a1), u8::from(a1 && stays)]);
        w.push(vec![wi; 3]);
    }
    let ar: Vec<&[u8]> = a.iter().map(|v| v.as_slice()).collect();
    let wr: Vec<&[f64]> = w.iter().map(|v| v.as_slice()).collect();
    let y: Vec<&[f64]> = vec![&[0.0; 3]; 800];
    let p = panel(&ar, &wr, &y);
    let r = Regime::always(1, 3);
    let fits = fit_treatment_models(&p, &r, &num, &den, false).unwrap();
    let flags = positivity_probe(&p, &r, &fits, 0.01);
    let at_risk = (0..800).filter(|i| i % 2 == 0 && i % 5 != 1).count() as f64;
    assert_eq!(flags.len() as f64, at_risk);
    assert!(flags.iter().all(|f| f.time == 2 && (f.probability - 1.0 / at_risk).abs() < 1e-9));
}

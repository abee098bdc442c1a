use std::collections::BTreeMap;

use ptgformula::bootstrap::{BootstrapConfig, BootstrapMode};
use ptgformula::dgp::{draw_params, simulate_observed, W1, W2};
use ptgformula::estimators::{estimate_psi, EstimatorKind, Workspace};
use ptgformula::sensitivity::{
    apply_delta, breakeven, constant_grid, grid_from_json, psi_prime, sensitivity_sweep, sensitivity_sweep_bootstrap, DeltaSpec,
    SensitivityError,
};
use ptgformula::study::{never_treated, study_specs, DEFAULT_PARAM_SEED};
use ptgformula::Panel;

const T: usize = 5;

fn data(n: usize, seed: u64) -> Panel {
    simulate_observed(n, &draw_params(DEFAULT_PARAM_SEED, T), seed)
}

#[test]
fn zero_offset_reproduces_the_base_estimate() {
    let p = data(3000, 1);
    let specs = study_specs(T + 1, true, true);
    let r = never_treated(T + 1);
    let ws = Workspace::new(&p, &r, &specs, &EstimatorKind::ALL, T).unwrap();
    for kind in EstimatorKind::ALL {
        let base = estimate_psi(&p, &r, kind, &specs, Some(T)).unwrap();
        let prime = psi_prime(&ws, kind, &DeltaSpec::zero(), T).unwrap();
        for t in 0..=T {
            assert!((base.psi[t] - prime.psi[t]).abs() < 1e-12, "{kind} t={t}");
        }
    }
}

#[test]
fn constant_offset_shifts_by_triangular_numbers() {
    let p = data(3000, 2);
    let specs = study_specs(T + 1, true, true);
    let r = never_treated(T + 1);
    let ws = Workspace::new(&p, &r, &specs, &EstimatorKind::ALL, T).unwrap();
    for kind in [EstimatorKind::Ice, EstimatorKind::Iptw] {
        let base = psi_prime(&ws, kind, &DeltaSpec::zero(), T).unwrap();
        for c in [-0.4, 0.25, 1.5] {
            let shifted = psi_prime(&ws, kind, &DeltaSpec::Constant { value: c }, T).unwrap();
            for t in 0..=T {
                let expect = c * (t * (t + 1)) as f64 / 2.0;
                assert!((shifted.psi[t] - base.psi[t] - expect).abs() < 1e-10, "{kind} c={c} t={t}");
            }
        }
    }
}

#[test]
fn time_varying_offset_is_weighted_by_step_count() {
    // Each (k, k) cell gets k copies of c_k.
    let p = data(2000, 3);
    let specs = study_specs(T + 1, true, true);
    let r = never_treated(T + 1);
    let ws = Workspace::new(&p, &r, &specs, &[EstimatorKind::Ice], T).unwrap();
    let c = vec![0.0, 0.3, -0.1, 0.2, 0.05, -0.4];
    let base = psi_prime(&ws, EstimatorKind::Ice, &DeltaSpec::zero(), T).unwrap();
    let shifted = psi_prime(&ws, EstimatorKind::Ice, &DeltaSpec::TimeVarying { values: c.clone() }, T).unwrap();
    for t in 0..=T {
        let expect: f64 = (1..=t).map(|k| k as f64 * c[k]).sum();
        assert!((shifted.psi[t] - base.psi[t] - expect).abs() < 1e-10);
    }
}

#[test]
fn previous_period_outcome_is_never_offset() {
    let p = data(200, 4);
    let deltas = [
        DeltaSpec::Constant { value: 2.0 },
        DeltaSpec::TimeVarying { values: vec![1.0; T + 1] },
        DeltaSpec::CovariateLinear { intercept: vec![0.5; T + 1], coefficients: BTreeMap::from([(W2.to_string(), vec![0.3; T + 1])]) },
    ];
    for d in &deltas {
        for k in 1..=T {
            assert_eq!(apply_delta(&p, d, k - 1, k).unwrap(), p.response_column(k - 1));
            let moved = apply_delta(&p, d, k, k).unwrap();
            assert!(moved.iter().zip(p.response_column(k)).any(|(a, b)| a != &b));
        }
    }
    assert!(matches!(apply_delta(&p, &deltas[0], 1, 3), Err(SensitivityError::InvalidCell { j: 1, k: 3 })));
}

#[test]
fn covariate_linear_offset_sums_over_history() {
    let p = data(50, 5);
    let d = DeltaSpec::CovariateLinear { intercept: vec![], coefficients: BTreeMap::from([(W1.to_string(), vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0])]) };
    let col = apply_delta(&p, &d, 3, 3).unwrap();
    let c = p.covariate_index(W1).unwrap();
    for (i, v) in col.iter().enumerate() {
        let expect = p.response(i, 3) + 3.0 * (1..=3).map(|m| p.covariate(i, m, c)).sum::<f64>();
        assert!((v - expect).abs() < 1e-12);
    }
}

#[test]
fn tabulated_offset_uses_bins_of_the_covariate() {
    let p = data(80, 6);
    let table: Vec<Vec<f64>> = (0..=T).map(|k| vec![-(k as f64), 0.0, k as f64]).collect();
    let d = DeltaSpec::Tabulated { covariate: W2.into(), breaks: vec![-0.5, 0.5], table };
    let c = p.covariate_index(W2).unwrap();
    let col = apply_delta(&p, &d, 2, 2).unwrap();
    for (i, v) in col.iter().enumerate() {
        let bin_value = |m: usize| {
            let w = p.covariate(i, m, c);
            if w < -0.5 {
                -2.0
            } else if w < 0.5 {
                0.0
            } else {
                2.0
            }
        };
        assert!((v - p.response(i, 2) - bin_value(1) - bin_value(2)).abs() < 1e-12);
    }
}

#[test]
fn unevaluable_offsets_are_rejected() {
    let p = data(30, 7);
    let short = DeltaSpec::TimeVarying { values: vec![0.1, 0.2] };
    assert!(matches!(apply_delta(&p, &short, 3, 3), Err(SensitivityError::DeltaNotEvaluable { time: 3, .. })));
    let unknown = DeltaSpec::CovariateLinear { intercept: vec![], coefficients: BTreeMap::from([("Z".to_string(), vec![1.0; T + 1])]) };
    assert!(matches!(apply_delta(&p, &unknown, 1, 1), Err(SensitivityError::DeltaNotEvaluable { .. })));
    let nan = DeltaSpec::Constant { value: f64::NAN };
    assert!(apply_delta(&p, &nan, 1, 1).is_err());
    let ragged = DeltaSpec::Tabulated { covariate: W2.into(), breaks: vec![0.0], table: vec![vec![0.0]; T + 1] };
    assert!(apply_delta(&p, &ragged, 2, 2).is_err());
}

#[test]
fn sweep_rows_follow_grid_order_and_are_monotone() {
    let p = data(3000, 8);
    let specs = study_specs(T + 1, true, true);
    let r = never_treated(T + 1);
    let grid = constant_grid(-0.2, 0.2, 3);
    let rows = sensitivity_sweep(&p, &r, &EstimatorKind::ALL, &specs, &grid, T).unwrap();
    assert_eq!(rows.len(), 9);
    for kind in EstimatorKind::ALL {
        let mine: Vec<_> = rows.iter().filter(|r| r.estimator == kind).collect();
        assert_eq!(mine.iter().map(|r| r.index).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(mine[0].psi_prime < mine[1].psi_prime && mine[1].psi_prime < mine[2].psi_prime, "{kind}");
        let base = estimate_psi(&p, &r, kind, &specs, Some(T)).unwrap();
        assert!((mine[1].psi_prime - base.psi[T]).abs() < 1e-12);
        assert!((mine[1].contrast - base.contrast[T]).abs() < 1e-12);
    }
}

#[test]
fn single_zero_grid_point_equals_base() {
    let p = data(1000, 9);
    let specs = study_specs(T + 1, true, true);
    let r = never_treated(T + 1);
    let rows = sensitivity_sweep(&p, &r, &[EstimatorKind::Tmle], &specs, &[DeltaSpec::zero()], 3).unwrap();
    let base = estimate_psi(&p, &r, EstimatorKind::Tmle, &specs, Some(3)).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].psi_prime, base.psi[3]);
}

#[test]
fn breakeven_is_the_first_interval_containing_zero() {
    let p = data(3000, 10);
    let specs = study_specs(T + 1, true, true);
    let r = never_treated(T + 1);
    let t = 3;
    let base = estimate_psi(&p, &r, EstimatorKind::Ice, &specs, Some(t)).unwrap();
    // Walk the offset from zero toward the value that cancels the contrast.
    let target = -base.contrast[t] / 6.0;
    let grid = constant_grid(0.0, target / 10.0, 16);
    let cfg = BootstrapConfig::new(BootstrapMode::UnitResample, 40, 77);
    let rows = sensitivity_sweep_bootstrap(&p, &r, &[EstimatorKind::Ice], &specs, &grid, t, &cfg).unwrap();
    let be = breakeven(&rows, EstimatorKind::Ice);
    for row in &rows {
        let (lo, hi) = row.contrast_ci.unwrap();
        assert!(lo < row.contrast && row.contrast < hi);
    }
    if let Some(be) = be {
        assert!(rows[..be.index].iter().all(|r| r.contrast_ci.is_some_and(|(lo, hi)| lo > 0.0 || hi < 0.0)));
        // The interval at the exact cancelling offset would be centred on zero.
        assert!(be.index <= 10);
    } else {
        panic!("offset grid reaches the cancelling value, so some interval must contain zero");
    }
}

#[test]
fn grids_parse_from_json() {
    let g = grid_from_json(
        r#"[{"form":"constant","value":0.5},
            {"form":"time_varying","values":[0,1,2]},
            {"form":"covariate_linear","coefficients":{"W1":[0,0.1]}},
            {"form":"tabulated","covariate":"W2","breaks":[0],"table":[[0,1],[1,2]]}]"#,
    )
    .unwrap();
    assert_eq!(g.len(), 4);
    assert_eq!(g[0], DeltaSpec::Constant { value: 0.5 });
    assert!(grid_from_json(r#"[{"form":"quadratic"}]"#).is_err());
}

use ptgformula::oracle::{shipped_fixtures, OracleError};

#[test]
fn conforming_fixtures_identify_the_counterfactual_mean() {
    let fx = shipped_fixtures();
    assert!(fx.iter().filter(|f| f.conforming).count() >= 5);
    assert!(fx.iter().any(|f| f.conforming && matches!(f.regime(), ptgformula::panel::Regime::Dynamic(_))));
    for f in fx.iter().filter(|f| f.conforming) {
        let r = f.regime();
        for t in 0..=f.dgp.tau {
            let psi = f.dgp.exact_psi(&r, t).unwrap();
            let mu = f.dgp.exact_mu(&r, t).unwrap();
            println!("{} t={t} psi={psi} mu={mu}", f.name);
            assert!((psi - mu).abs() < 1e-12, "{} t={t}: {psi} vs {mu}", f.name);
        }
    }
}

#[test]
fn violation_fixtures_show_a_gap() {
    for f in shipped_fixtures().iter().filter(|f| !f.conforming) {
        let r = f.regime();
        let gap = (0..=f.dgp.tau)
            .map(|t| (f.dgp.exact_psi(&r, t).unwrap() - f.dgp.exact_mu(&r, t).unwrap()).abs())
            .fold(0.0, f64::max);
        println!("{} gap={gap}", f.name);
        assert!(gap > 1e-3, "{}: {gap}", f.name);
    }
}

#[test]
fn psi_matches_its_phi_cells() {
    for f in shipped_fixtures() {
        let r = f.regime();
        let d = &f.dgp;
        assert_eq!(d.exact_psi(&r, 0).unwrap(), d.exact_phi(&r, 0, 0).unwrap());
        let mut acc = d.exact_phi(&r, 0, 0).unwrap();
        for k in 1..=d.tau {
            acc += d.exact_phi(&r, k, k).unwrap() - d.exact_phi(&r, k - 1, k).unwrap();
            assert!((acc - d.exact_psi(&r, k).unwrap()).abs() < 1e-14);
        }
    }
}

#[test]
fn bad_json_is_rejected() {
    assert!(matches!(ptgformula::oracle::OracleFixture::from_json("{}"), Err(OracleError::InvalidDgp(_))));
}

use super::{GlmError, ModelSpec, NaturalSpline, Term};
use crate::linalg::Matrix;
use crate::panel::{adherence, AdherenceMatrix, LongPanel, Regime, OUTCOME_NAME, TREATMENT_NAME};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy)]
enum Source {
    Cov(usize),
    Treatment,
    Outcome,
}

#[derive(Debug, Clone)]
enum Compiled<T> {
    Intercept,
    Value { src: Source, time: usize, exponent: i32, log: bool, name_idx: usize },
    Spline(Vec<T>),
    Decision(usize),
    Product(Box<Compiled<T>>, Box<Compiled<T>>, usize),
}

/// Spec resolved against one panel and one design time.
pub(crate) struct CompiledDesign<T> {
    terms: Vec<Compiled<T>>,
    names: Vec<String>,
    ncols: usize,
}

impl<T: Real> CompiledDesign<T> {
    pub(crate) fn new(panel: &LongPanel<T>, spec: &ModelSpec, time: usize) -> Result<Self, GlmError> {
        spec.validate()?;
        if time >= panel.n_times() {
            return Err(GlmError::InvalidSpec(format!("design time {time} outside the panel")));
        }
        let mut names = Vec::new();
        let terms = spec
            .terms
            .iter()
            .map(|t| compile(panel, t, time, &mut names))
            .collect::<Result<_, _>>()?;
        Ok(Self { terms, names, ncols: spec.n_columns() })
    }

    /// Design rows for `units`, in order.
    pub(crate) fn rows(&self, panel: &LongPanel<T>, adh: &AdherenceMatrix, units: &[usize]) -> Result<Matrix<T>, GlmError> {
        let mut data = Vec::with_capacity(units.len() * self.ncols);
        let mut scratch = vec![T::zero(); self.ncols];
        for &i in units {
            let mut off = 0;
            for term in &self.terms {
                off += self.eval(term, panel, adh, i, &mut scratch[off..])?;
            }
            data.extend_from_slice(&scratch);
        }
        Ok(Matrix::from_row_major(units.len(), self.ncols, data))
    }

    fn eval(
        &self,
        term: &Compiled<T>,
        panel: &LongPanel<T>,
        adh: &AdherenceMatrix,
        i: usize,
        out: &mut [T],
    ) -> Result<usize, GlmError> {
        match term {
            Compiled::Intercept => {
                out[0] = T::one();
                Ok(1)
            }
            Compiled::Value { src, time, exponent, log, name_idx } => {
                let v = match src {
                    Source::Cov(c) => panel.covariate(i, *time, *c),
                    Source::Treatment => T::from_u8(panel.treatment(i, *time)).unwrap(),
                    Source::Outcome => panel.response(i, *time),
                };
                out[0] = if *log {
                    if !(v > T::zero()) {
                        return Err(GlmError::NonPositiveLog {
                            name: self.names[*name_idx].clone(),
                            unit: panel.unit_ids()[i].clone(),
                            time: *time,
                        });
                    }
                    v.ln()
                } else if *exponent == 1 {
                    v
                } else {
                    v.powi(*exponent)
                };
                Ok(1)
            }
            Compiled::Spline(values) => {
                out[..values.len()].copy_from_slice(values);
                Ok(values.len())
            }
            Compiled::Decision(time) => {
                out[0] = T::from_u8(adh.decision(i, *time)).unwrap();
                Ok(1)
            }
            Compiled::Product(a, b, wb) => {
                let mut left = vec![T::zero(); out.len()];
                let na = self.eval(a, panel, adh, i, &mut left)?;
                let mut right = vec![T::zero(); *wb];
                self.eval(b, panel, adh, i, &mut right)?;
                for p in 0..na {
                    for q in 0..*wb {
                        out[p * wb + q] = left[p] * right[q];
                    }
                }
                Ok(na * wb)
            }
        }
    }
}

fn compile<T: Real>(
    panel: &LongPanel<T>,
    term: &Term,
    time: usize,
    names: &mut Vec<String>,
) -> Result<Compiled<T>, GlmError> {
    let value = |name: &String, lag: usize, exponent: i32, log: bool, names: &mut Vec<String>| {
        let src = match name.as_str() {
            TREATMENT_NAME => Source::Treatment,
            OUTCOME_NAME => Source::Outcome,
            _ => Source::Cov(panel.covariate_index(name).ok_or_else(|| GlmError::UnknownCovariate(name.clone()))?),
        };
        let concurrent_leak = matches!(src, Source::Treatment | Source::Outcome) && lag == 0;
        if lag > time || concurrent_leak {
            return Err(GlmError::InvalidLag { name: name.clone(), lag, time });
        }
        names.push(name.clone());
        Ok(Compiled::Value { src, time: time - lag, exponent, log, name_idx: names.len() - 1 })
    };
    match term {
        Term::Intercept => Ok(Compiled::Intercept),
        Term::Covariate { name, lag } => value(name, *lag, 1, false, names),
        Term::Power { name, lag, exponent } => value(name, *lag, *exponent, false, names),
        Term::LogCovariate { name, lag } => value(name, *lag, 1, true, names),
        Term::TimeSpline { df } => {
            let basis = NaturalSpline::for_time_grid(panel.n_times(), *df);
            Ok(Compiled::Spline(basis.eval(T::from_usize_lossy(time))))
        }
        Term::TreatmentIndicator => Ok(Compiled::Decision(time)),
        Term::Interaction(a, b) => Ok(Compiled::Product(
            Box::new(compile(panel, a, time, names)?),
            Box::new(compile(panel, b, time, names)?),
            b.width(),
        )),
    }
}

/// Design matrix of `spec` at `time`, one row per unit in panel order.
///
/// `TreatmentIndicator` columns hold the regime's decision for each unit.
pub fn build_design<T: Real>(
    panel: &LongPanel<T>,
    spec: &ModelSpec,
    time: usize,
    regime: &Regime,
) -> Result<Matrix<T>, GlmError> {
    regime
        .check(panel.n_times(), panel.covariate_names())
        .map_err(|e| GlmError::InvalidSpec(e.to_string()))?;
    let adh = adherence(panel, regime);
    let units: Vec<usize> = (0..panel.n_units()).collect();
    build_design_rows(panel, &adh, spec, time, &units)
}

/// Design rows for a subset of units, with adherence already evaluated.
pub fn build_design_rows<T: Real>(
    panel: &LongPanel<T>,
    adh: &AdherenceMatrix,
    spec: &ModelSpec,
    time: usize,
    units: &[usize],
) -> Result<Matrix<T>, GlmError> {
    CompiledDesign::new(panel, spec, time)?.rows(panel, adh, units)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::testutil::small_panel;
    use crate::panel::{LongPanel, PanelParts};

    fn two_unit() -> LongPanel<f64> {
        LongPanel::from_parts(PanelParts {
            unit_ids: vec!["a".into(), "b".into()],
            n_times: 2,
            covariate_names: vec!["W1".into(), "W2".into()],
            covariates: vec![1.0, 0.5, 0.0, 2.0, 0.0, -1.0, 1.0, 3.0],
            treatment: vec![0, 0, 0, 1],
            outcome: vec![1.0, 2.0, 3.0, 4.0],
            unit_weight: None,
            trials: None,
        })
        .unwrap()
    }

    #[test]
    fn intercept_and_powers() {
        let p = two_unit();
        let r = Regime::always(0, 2);
        let x = build_design(&p, &ModelSpec::gaussian(vec![Term::Intercept]), 1, &r).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 1.0]);
        let spec = ModelSpec::gaussian(vec![Term::Intercept, Term::covariate("W2", 0), Term::power("W2", 0, 2)]);
        let x = build_design(&p, &spec, 0, &r).unwrap();
        assert_eq!(x.row(0), &[1.0, 0.5, 0.25]);
        assert_eq!(x.row(1), &[1.0, -1.0, 1.0]);
    }

    #[test]
    fn lags_pseudo_covariates_and_errors() {
        let p = two_unit();
        let r = Regime::always(0, 2);
        let spec = ModelSpec::gaussian(vec![
            Term::covariate("W2", 1),
            Term::covariate("A", 1),
            Term::covariate("Y", 1),
            Term::interaction(Term::covariate("W1", 0), Term::TreatmentIndicator),
        ]);
        let x = build_design(&p, &spec, 1, &r).unwrap();
        assert_eq!(x.row(0), &[0.5, 0.0, 1.0, 0.0]);
        assert_eq!(x.row(1), &[-1.0, 0.0, 3.0, 0.0]);
        assert!(matches!(build_design(&p, &spec, 0, &r), Err(GlmError::InvalidLag { .. })));
        let leak = ModelSpec::gaussian(vec![Term::covariate("A", 0)]);
        assert!(matches!(build_design(&p, &leak, 1, &r), Err(GlmError::InvalidLag { .. })));
        let unknown = ModelSpec::gaussian(vec![Term::covariate("V", 0)]);
        assert!(matches!(build_design(&p, &unknown, 0, &r), Err(GlmError::UnknownCovariate(_))));
        let log = ModelSpec::gaussian(vec![Term::log("W1", 0)]);
        assert!(matches!(build_design(&p, &log, 0, &r), Err(GlmError::NonPositiveLog { .. })));
    }

    #[test]
    fn spline_interaction_width() {
        let p = small_panel(&[&[1, 1, 1, 1]], &[&[1.0, 2.0, 3.0, 4.0]], &[&[0.0; 4]]);
        let spec = ModelSpec::gaussian(vec![
            Term::TimeSpline { df: 2 },
            Term::interaction(Term::TimeSpline { df: 2 }, Term::log("W", 0)),
        ]);
        let x = build_design(&p, &spec, 2, &Regime::always(1, 4)).unwrap();
        let b = NaturalSpline::<f64>::for_time_grid(4, 2).eval(2.0);
        let l = 3f64.ln();
        assert_eq!(x.row(0), &[b[0], b[1], b[0] * l, b[1] * l]);
    }
}

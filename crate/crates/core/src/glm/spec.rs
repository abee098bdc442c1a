use serde::{Deserialize, Serialize};

use super::GlmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    Binomial,
    Quasibinomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
    Logit,
}

/// One block of design columns.
///
/// `Covariate`, `Power` and `LogCovariate` read a named covariate at
/// `time - lag`; the names `A` and `Y` refer to observed treatment and
/// outcome and need `lag >= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Intercept,
    Covariate {
        name: String,
        #[serde(default)]
        lag: usize,
    },
    Power {
        name: String,
        #[serde(default)]
        lag: usize,
        exponent: i32,
    },
    LogCovariate {
        name: String,
        #[serde(default)]
        lag: usize,
    },
    /// Natural cubic spline of time with `df` columns.
    TimeSpline { df: usize },
    /// The regime's decision `a*_m` at the design time.
    TreatmentIndicator,
    Interaction(Box<Term>, Box<Term>),
}

impl Term {
    pub fn covariate(name: &str, lag: usize) -> Self {
        Term::Covariate { name: name.into(), lag }
    }

    pub fn power(name: &str, lag: usize, exponent: i32) -> Self {
        Term::Power { name: name.into(), lag, exponent }
    }

    pub fn log(name: &str, lag: usize) -> Self {
        Term::LogCovariate { name: name.into(), lag }
    }

    pub fn interaction(a: Term, b: Term) -> Self {
        Term::Interaction(Box::new(a), Box::new(b))
    }

    /// Intercept plus every product of `W^e` (`1 <= e < levels`) across the
    /// given lags: a saturated design for a covariate taking `levels`
    /// distinct values at each of those lags.
    pub fn saturated(name: &str, lags: &[usize], levels: usize) -> Vec<Term> {
        let mut terms: Vec<Option<Term>> = vec![None];
        for &lag in lags {
            let mut next = Vec::with_capacity(terms.len() * levels);
            for t in &terms {
                next.push(t.clone());
                for e in 1..levels {
                    let f = if e == 1 { Term::covariate(name, lag) } else { Term::power(name, lag, e as i32) };
                    next.push(Some(match t {
                        None => f,
                        Some(t) => Term::interaction(t.clone(), f),
                    }));
                }
            }
            terms = next;
        }
        terms.into_iter().map(|t| t.unwrap_or(Term::Intercept)).collect()
    }

    /// Number of design columns the term expands to.
    pub fn width(&self) -> usize {
        match self {
            Term::TimeSpline { df } => *df,
            Term::Interaction(a, b) => a.width() * b.width(),
            _ => 1,
        }
    }
}

/// Declarative design recipe plus GLM family and link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub terms: Vec<Term>,
    pub family: Family,
    pub link: Link,
}

impl ModelSpec {
    pub fn new(terms: Vec<Term>, family: Family, link: Link) -> Result<Self, GlmError> {
        let spec = Self { terms, family, link };
        spec.validate()?;
        Ok(spec)
    }

    pub fn gaussian(terms: Vec<Term>) -> Self {
        Self { terms, family: Family::Gaussian, link: Link::Identity }
    }

    pub fn logistic(terms: Vec<Term>) -> Self {
        Self { terms, family: Family::Binomial, link: Link::Logit }
    }

    pub fn quasibinomial(terms: Vec<Term>) -> Self {
        Self { terms, family: Family::Quasibinomial, link: Link::Logit }
    }

    pub fn intercept_only(family: Family, link: Link) -> Self {
        Self { terms: vec![Term::Intercept], family, link }
    }

    pub fn n_columns(&self) -> usize {
        self.terms.iter().map(Term::width).sum()
    }

    pub fn validate(&self) -> Result<(), GlmError> {
        check_pair(self.family, self.link)?;
        if self.terms.is_empty() {
            return Err(GlmError::InvalidSpec("model needs at least one term".into()));
        }
        fn walk(t: &Term) -> Result<(), GlmError> {
            match t {
                Term::TimeSpline { df } if *df == 0 => {
                    Err(GlmError::InvalidSpec("time spline needs df >= 1".into()))
                }
                Term::Interaction(a, b) => walk(a).and_then(|_| walk(b)),
                _ => Ok(()),
            }
        }
        self.terms.iter().try_for_each(walk)
    }

    pub fn from_json(text: &str) -> Result<Self, GlmError> {
        let spec: Self = serde_json::from_str(text).map_err(|e| GlmError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Same spec with every term mentioning the covariate `name` removed.
    pub fn without_covariate(&self, name: &str) -> Self {
        fn mentions(t: &Term, name: &str) -> bool {
            match t {
                Term::Covariate { name: n, .. } | Term::Power { name: n, .. } | Term::LogCovariate { name: n, .. } => {
                    n == name
                }
                Term::Interaction(a, b) => mentions(a, name) || mentions(b, name),
                _ => false,
            }
        }
        Self {
            terms: self.terms.iter().filter(|t| !mentions(t, name)).cloned().collect(),
            ..self.clone()
        }
    }
}

pub(crate) fn check_pair(family: Family, link: Link) -> Result<(), GlmError> {
    match (family, link) {
        (Family::Gaussian, Link::Identity) | (Family::Binomial | Family::Quasibinomial, Link::Logit) => Ok(()),
        _ => Err(GlmError::InvalidSpec(format!("{family:?} family cannot use the {link:?} link"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_roundtrip_and_validation() {
        let text = r#"{"terms":["intercept",{"covariate":{"name":"W2","lag":1}},
            {"power":{"name":"W2","exponent":2}},{"time_spline":{"df":3}},
            {"interaction":[{"time_spline":{"df":3}},"treatment_indicator"]}],
            "family":"quasibinomial","link":"logit"}"#;
        let spec = ModelSpec::from_json(text).unwrap();
        assert_eq!(spec.terms[2], Term::power("W2", 0, 2));
        assert_eq!(spec.n_columns(), 1 + 1 + 1 + 3 + 3);
        let back = ModelSpec::from_json(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        assert!(ModelSpec::from_json(r#"{"terms":["intercept"],"family":"gaussian","link":"logit"}"#).is_err());
        assert!(ModelSpec::from_json(r#"{"terms":[{"time_spline":{"df":0}}],"family":"gaussian","link":"identity"}"#)
            .is_err());
    }

    #[test]
    fn drop_covariate() {
        let s = ModelSpec::gaussian(vec![
            Term::Intercept,
            Term::covariate("W1", 0),
            Term::power("W2", 0, 2),
            Term::interaction(Term::covariate("W2", 0), Term::TreatmentIndicator),
        ]);
        assert_eq!(s.without_covariate("W2").terms, vec![Term::Intercept, Term::covariate("W1", 0)]);
    }
}

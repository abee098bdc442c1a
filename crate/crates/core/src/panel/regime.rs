use serde::{Deserialize, Serialize};

use super::PanelError;

/// Read access to a unit's history, as seen by a regime rule deciding the
/// treatment at time `k`. Rules may look at covariates up to `k` and at
/// treatments strictly before `k`.
pub trait History {
    fn covariate(&self, name: &str, time: usize) -> Option<f64>;
    fn treatment(&self, time: usize) -> u8;
}

/// Registered dynamic treatment rules `g_k(W̄_k, Ā_{k-1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "params", rename_all = "snake_case")]
pub enum DynamicRule {
    /// Ignores the history; equivalent to a static plan.
    Constant { plan: Vec<u8> },
    /// `a_k = 1{W_k > cutoff}` (or its complement when `treat_above` is false).
    Threshold {
        covariate: String,
        cutoff: f64,
        #[serde(default = "default_true")]
        treat_above: bool,
    },
    /// Like `Threshold`, but once the plan has assigned treatment it stays
    /// assigned: `a_k = max(A_{k-1}, 1{W_k > cutoff})`.
    ThresholdSticky { covariate: String, cutoff: f64 },
    /// Lookup table over a discretized covariate: `table[k][bin]`, where the
    /// bin of `W_k` is the number of `breaks` it is greater than or equal to.
    DecisionTable {
        covariate: String,
        breaks: Vec<f64>,
        table: Vec<Vec<u8>>,
    },
}

fn default_true() -> bool {
    true
}

/// A deterministic treatment plan: a static vector `ā*` or a dynamic rule.
#[derive(Debug, Clone, PartialEq)]
pub enum Regime {
    Static(Vec<u8>),
    Dynamic(DynamicRule),
}

impl Regime {
    pub fn always(value: u8, n_times: usize) -> Self {
        Regime::Static(vec![value; n_times])
    }

    /// The static plan wrapped as a constant dynamic rule.
    pub fn as_dynamic(&self) -> Regime {
        match self {
            Regime::Static(plan) => Regime::Dynamic(DynamicRule::Constant { plan: plan.clone() }),
            other => other.clone(),
        }
    }

    /// Checks the regime can be evaluated for `n_times` time points over
    /// covariates named `covariates`.
    pub fn check(&self, n_times: usize, covariates: &[String]) -> Result<(), PanelError> {
        let needs = |name: &String| {
            if covariates.contains(name) {
                Ok(())
            } else {
                Err(PanelError::RegimeCovariate(name.clone()))
            }
        };
        match self {
            Regime::Static(plan) | Regime::Dynamic(DynamicRule::Constant { plan }) => {
                if plan.len() < n_times {
                    return Err(PanelError::RegimeTooShort { plan: plan.len(), times: n_times });
                }
                if plan.iter().any(|&a| a > 1) {
                    return Err(PanelError::RegimeSpec("plan entries must be 0 or 1".into()));
                }
                Ok(())
            }
            Regime::Dynamic(DynamicRule::Threshold { covariate, cutoff, .. })
            | Regime::Dynamic(DynamicRule::ThresholdSticky { covariate, cutoff }) => {
                if !cutoff.is_finite() {
                    return Err(PanelError::RegimeSpec("cutoff must be finite".into()));
                }
                needs(covariate)
            }
            Regime::Dynamic(DynamicRule::DecisionTable { covariate, breaks, table }) => {
                needs(covariate)?;
                if table.len() < n_times {
                    return Err(PanelError::RegimeTooShort { plan: table.len(), times: n_times });
                }
                if breaks.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(PanelError::RegimeSpec("breaks must be strictly increasing".into()));
                }
                if table.iter().any(|row| row.len() != breaks.len() + 1 || row.iter().any(|&a| a > 1)) {
                    return Err(PanelError::RegimeSpec("each table row needs breaks+1 binary entries".into()));
                }
                Ok(())
            }
        }
    }

    /// Treatment the regime assigns at time `k` given the history.
    ///
    /// Panics if the regime was not [`check`](Self::check)ed against the data.
    pub fn decide(&self, k: usize, history: &dyn History) -> u8 {
        match self {
            Regime::Static(plan) => plan[k],
            Regime::Dynamic(rule) => match rule {
                DynamicRule::Constant { plan } => plan[k],
                DynamicRule::Threshold { covariate, cutoff, treat_above } => {
                    let w = history.covariate(covariate, k).expect("checked covariate");
                    u8::from((w > *cutoff) == *treat_above)
                }
                DynamicRule::ThresholdSticky { covariate, cutoff } => {
                    let w = history.covariate(covariate, k).expect("checked covariate");
                    let prior = if k > 0 { history.treatment(k - 1) } else { 0 };
                    u8::from(prior == 1 || w > *cutoff)
                }
                DynamicRule::DecisionTable { covariate, breaks, table } => {
                    let w = history.covariate(covariate, k).expect("checked covariate");
                    let bin = breaks.iter().filter(|&&b| w >= b).count();
                    table[k][bin]
                }
            },
        }
    }
}

/// JSON form of a regime: `{"static":[..]}` or `{"rule":"name","params":{..}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegimeFile {
    Static {
        #[serde(rename = "static")]
        plan: Vec<u8>,
    },
    Rule(DynamicRule),
}

impl From<RegimeFile> for Regime {
    fn from(f: RegimeFile) -> Self {
        match f {
            RegimeFile::Static { plan } => Regime::Static(plan),
            RegimeFile::Rule(rule) => Regime::Dynamic(rule),
        }
    }
}

impl From<&Regime> for RegimeFile {
    fn from(r: &Regime) -> Self {
        match r {
            Regime::Static(plan) => RegimeFile::Static { plan: plan.clone() },
            Regime::Dynamic(rule) => RegimeFile::Rule(rule.clone()),
        }
    }
}

impl Regime {
    pub fn from_json(text: &str) -> Result<Self, PanelError> {
        serde_json::from_str::<RegimeFile>(text)
            .map(Regime::from)
            .map_err(|e| PanelError::RegimeSpec(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&RegimeFile::from(self)).expect("regime serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct H {
        w: Vec<f64>,
        a: Vec<u8>,
    }
    impl History for H {
        fn covariate(&self, name: &str, t: usize) -> Option<f64> {
            (name == "W").then(|| self.w[t])
        }
        fn treatment(&self, t: usize) -> u8 {
            self.a[t]
        }
    }

    #[test]
    fn json_forms_parse() {
        let r = Regime::from_json(r#"{"static":[1,1,0]}"#).unwrap();
        assert_eq!(r, Regime::Static(vec![1, 1, 0]));
        let r = Regime::from_json(r#"{"rule":"threshold","params":{"covariate":"W","cutoff":0.5}}"#).unwrap();
        assert_eq!(
            r,
            Regime::Dynamic(DynamicRule::Threshold { covariate: "W".into(), cutoff: 0.5, treat_above: true })
        );
        assert_eq!(Regime::from_json(&r.to_json()).unwrap(), r);
        assert!(Regime::from_json(r#"{"rule":"nope","params":{}}"#).is_err());
    }

    #[test]
    fn rules_decide() {
        let h = H { w: vec![-1.0, 2.0, -3.0], a: vec![0, 1, 1] };
        let thr = Regime::Dynamic(DynamicRule::Threshold { covariate: "W".into(), cutoff: 0.0, treat_above: true });
        assert_eq!((0..3).map(|k| thr.decide(k, &h)).collect::<Vec<_>>(), vec![0, 1, 0]);
        let sticky = Regime::Dynamic(DynamicRule::ThresholdSticky { covariate: "W".into(), cutoff: 0.0 });
        assert_eq!((0..3).map(|k| sticky.decide(k, &h)).collect::<Vec<_>>(), vec![0, 1, 1]);
        let table = Regime::Dynamic(DynamicRule::DecisionTable {
            covariate: "W".into(),
            breaks: vec![0.0, 1.0],
            table: vec![vec![1, 0, 0], vec![0, 0, 1], vec![1, 1, 1]],
        });
        assert_eq!((0..3).map(|k| table.decide(k, &h)).collect::<Vec<_>>(), vec![1, 1, 1]);
        assert!(table.check(4, &["W".into()]).is_err());
        assert!(thr.check(3, &["V".into()]).is_err());
    }
}

use serde::{Deserialize, Serialize};

use super::FittedTreatmentModels;
use crate::panel::{adherence, LongPanel, Regime};
use crate::scalar::Real;

pub const DEFAULT_POSITIVITY_EPSILON: f64 = 0.01;

/// A unit still at risk at `time` whose fitted probability of following the
/// regime is below the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityFlag {
    pub time: usize,
    pub unit: String,
    pub probability: f64,
}

/// Lists `(k, i)` with unit `i` adherent through `k - 1` and fitted
/// probability of following the regime at `k` below `epsilon`.
pub fn positivity_probe<T: Real>(
    panel: &LongPanel<T>,
    regime: &Regime,
    fits: &FittedTreatmentModels<T>,
    epsilon: f64,
) -> Vec<PositivityFlag> {
    let adh = adherence(panel, regime);
    let mut out = Vec::new();
    for k in 1..fits.n_times().min(panel.n_times()) {
        for i in adh.adherent_units(Some(k - 1)) {
            let p = fits.follow_probability(k, i).as_f64();
            if p < epsilon {
                out.push(PositivityFlag { time: k, unit: panel.unit_ids()[i].clone(), probability: p });
            }
        }
    }
    out
}

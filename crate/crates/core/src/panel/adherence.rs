use super::{LongPanel, PanelError, Regime};
use crate::scalar::Real;

/// Regime decisions and cumulative adherence `I(Ā_ik = ā*_k)` per unit and time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdherenceMatrix {
    n_units: usize,
    n_times: usize,
    decisions: Vec<u8>,
    indicator: Vec<u8>,
}

impl AdherenceMatrix {
    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    /// Treatment the regime assigns to unit `i` at time `k`, evaluated on the
    /// unit's observed history.
    #[inline]
    pub fn decision(&self, unit: usize, time: usize) -> u8 {
        self.decisions[unit * self.n_times + time]
    }

    /// Whether unit `i` followed the regime at every time `0..=k`.
    #[inline]
    pub fn adherent(&self, unit: usize, time: usize) -> bool {
        self.indicator[unit * self.n_times + time] == 1
    }

    /// Adherence through `time`, with `None` meaning "before baseline"
    /// (every unit).
    #[inline]
    pub fn adherent_through(&self, unit: usize, time: Option<usize>) -> bool {
        time.is_none_or(|k| self.adherent(unit, k))
    }

    /// Ascending unit indices adherent through `time` (`None`: all units).
    pub fn adherent_units(&self, time: Option<usize>) -> Vec<usize> {
        (0..self.n_units).filter(|&i| self.adherent_through(i, time)).collect()
    }

    pub fn adherent_counts(&self) -> Vec<usize> {
        (0..self.n_times)
            .map(|k| (0..self.n_units).filter(|&i| self.adherent(i, k)).count())
            .collect()
    }

    pub fn row(&self, unit: usize) -> &[u8] {
        &self.indicator[unit * self.n_times..(unit + 1) * self.n_times]
    }
}

/// Evaluates the regime on every unit's observed history.
///
/// The regime must be valid for the panel (see [`Regime::check`]).
pub fn adherence<T: Real>(panel: &LongPanel<T>, regime: &Regime) -> AdherenceMatrix {
    let n = panel.n_units();
    let tt = panel.n_times();
    let mut decisions = Vec::with_capacity(n * tt);
    let mut indicator = Vec::with_capacity(n * tt);
    for i in 0..n {
        let h = panel.unit_history(i);
        let mut still = true;
        for k in 0..tt {
            let d = regime.decide(k, &h);
            decisions.push(d);
            still = still && panel.treatment(i, k) == d;
            indicator.push(u8::from(still));
        }
    }
    AdherenceMatrix { n_units: n, n_times: tt, decisions, indicator }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    /// Number of units adherent through each time.
    pub adherent_counts: Vec<usize>,
}

/// Checks the staggered discontinuation design: every unit follows the
/// regime at baseline.
pub fn validate_staggered<T: Real>(
    panel: &LongPanel<T>,
    regime: &Regime,
) -> Result<ValidationReport, PanelError> {
    regime.check(panel.n_times(), panel.covariate_names())?;
    let adh = adherence(panel, regime);
    let deviating: Vec<String> = (0..panel.n_units())
        .filter(|&i| !adh.adherent(i, 0))
        .map(|i| panel.unit_ids()[i].clone())
        .collect();
    if !deviating.is_empty() {
        return Err(PanelError::BaselineDeviation(deviating));
    }
    Ok(ValidationReport { adherent_counts: adh.adherent_counts() })
}

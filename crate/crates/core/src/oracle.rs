//! Exact ground truth for small discrete data-generating processes.
//!
//! A [`DiscreteDgp`] has one discrete covariate `W_t` per time, a binary
//! treatment `A_t`, an outcome whose conditional mean is tabulated over
//! `(W̄_t, Ā_t)`, and an optional discrete latent `U` entering the outcome
//! additively as `θ_t U`. Everything the estimators target is computed by
//! summing over all histories.
//!
//! Tables are flat and indexed by a mixed-radix context: the latent index
//! (when the table conditions on `U`) is the most significant digit, then
//! `w_0, w_1, ...` (support indices), then `a_0, a_1, ...`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{History, LongPanel, PanelError, PanelParts, Regime, RegimeFile};

pub const COVARIATE: &str = "W";
const SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("invalid discrete DGP: {0}")]
    InvalidDgp(String),
    #[error("positivity violation: conditioning history {0} has probability zero")]
    PositivityViolation(String),
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error("time {t} beyond tau = {tau}")]
    TimeOutOfRange { t: usize, tau: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDgp {
    pub tau: usize,
    /// Support values of `W_t`, per time.
    pub w_support: Vec<Vec<f64>>,
    /// Latent values and their probabilities; `[0.0]` / `[1.0]` for none.
    pub u_values: Vec<f64>,
    pub u_probs: Vec<f64>,
    /// `[t][ctx(u, w̄_{t-1}, ā_{t-1})][v]`: `P(W_t = w_support[t][v] | ·)`.
    pub w_probs: Vec<Vec<Vec<f64>>>,
    /// `[t][ctx(u, w̄_t, ā_{t-1})]`: `P(A_t = 1 | ·)`.
    pub a_probs: Vec<Vec<f64>>,
    /// `[t][ctx(w̄_t, ā_t)]`: outcome mean apart from the latent term.
    pub y_mean: Vec<Vec<f64>>,
    /// `θ_t`, the latent coefficient at each time.
    pub y_latent: Vec<f64>,
    /// Standard deviation of the Gaussian outcome noise used by [`DiscreteDgp::simulate`].
    #[serde(default = "default_sd")]
    pub y_sd: f64,
}

fn default_sd() -> f64 {
    1.0
}

/// A DGP with the regime it is meant to be checked against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFixture {
    pub name: String,
    pub description: String,
    /// Whether the DGP satisfies the identifying assumptions by construction.
    pub conforming: bool,
    pub regime: RegimeFile,
    pub dgp: DiscreteDgp,
}

impl OracleFixture {
    pub fn regime(&self) -> Regime {
        self.regime.clone().into()
    }

    pub fn from_json(text: &str) -> Result<Self, OracleError> {
        let f: Self = serde_json::from_str(text).map_err(|e| OracleError::InvalidDgp(e.to_string()))?;
        f.dgp.validate()?;
        Ok(f)
    }
}

/// Fixtures shipped with the crate.
pub fn shipped_fixtures() -> Vec<OracleFixture> {
    const FILES: [&str; 9] = [
        include_str!("../fixtures/oracle/static_treated_t1.json"),
        include_str!("../fixtures/oracle/static_treated_t2_ternary.json"),
        include_str!("../fixtures/oracle/static_untreated_t3.json"),
        include_str!("../fixtures/oracle/static_mixed_plan_t2.json"),
        include_str!("../fixtures/oracle/dynamic_threshold_t2.json"),
        include_str!("../fixtures/oracle/dynamic_table_t3.json"),
        include_str!("../fixtures/oracle/no_latent_t2.json"),
        include_str!("../fixtures/oracle/violation_varying_theta.json"),
        include_str!("../fixtures/oracle/violation_latent_covariate.json"),
    ];
    FILES.iter().map(|t| OracleFixture::from_json(t).expect("shipped fixture parses")).collect()
}

struct PathHistory<'a> {
    support: &'a [Vec<f64>],
    w: &'a [usize],
    a: &'a [u8],
}

impl History for PathHistory<'_> {
    fn covariate(&self, name: &str, time: usize) -> Option<f64> {
        (name == COVARIATE).then(|| self.support[time][self.w[time]])
    }
    fn treatment(&self, time: usize) -> u8 {
        self.a[time]
    }
}

impl DiscreteDgp {
    pub fn n_times(&self) -> usize {
        self.tau + 1
    }

    fn n_u(&self) -> usize {
        self.u_values.len()
    }

    /// Mixed-radix index of `(u, w, a)`.
    fn ctx(&self, u: Option<usize>, w: &[usize], a: &[u8]) -> usize {
        let mut idx = u.unwrap_or(0);
        for (t, &v) in w.iter().enumerate() {
            idx = idx * self.w_support[t].len() + v;
        }
        for &x in a {
            idx = idx * 2 + x as usize;
        }
        idx
    }

    fn n_ctx(&self, with_u: bool, w_len: usize, a_len: usize) -> usize {
        let mut n = if with_u { self.n_u() } else { 1 };
        for t in 0..w_len {
            n *= self.w_support[t].len();
        }
        n << a_len
    }

    fn w_prob(&self, t: usize, u: usize, w: &[usize], a: &[u8], v: usize) -> f64 {
        self.w_probs[t][self.ctx(Some(u), &w[..t], &a[..t])][v]
    }

    fn a_prob(&self, t: usize, u: usize, w: &[usize], a_prev: &[u8], a: u8) -> f64 {
        let p = self.a_probs[t][self.ctx(Some(u), &w[..=t], &a_prev[..t])];
        if a == 1 { p } else { 1.0 - p }
    }

    fn y_mean_at(&self, t: usize, u: usize, w: &[usize], a: &[u8]) -> f64 {
        self.y_mean[t][self.ctx(None, &w[..=t], &a[..=t])] + self.y_latent[t] * self.u_values[u]
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        let bad = |m: String| Err(OracleError::InvalidDgp(m));
        let nt = self.n_times();
        if self.tau > 3 {
            return bad("tau must be at most 3".into());
        }
        if self.w_support.len() != nt || self.w_probs.len() != nt || self.a_probs.len() != nt || self.y_mean.len() != nt || self.y_latent.len() != nt {
            return bad("every table needs one entry per time".into());
        }
        if self.w_support.iter().any(|s| s.is_empty() || s.len() > 3) {
            return bad("covariate supports need 1 to 3 values".into());
        }
        if self.u_values.is_empty() || self.u_values.len() != self.u_probs.len() {
            return bad("latent values and probabilities must match".into());
        }
        let check_dist = |p: &[f64], what: &str| -> Result<(), OracleError> {
            if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (p.iter().sum::<f64>() - 1.0).abs() > SUM_TOL {
                return Err(OracleError::InvalidDgp(format!("{what} is not a probability distribution")));
            }
            Ok(())
        };
        check_dist(&self.u_probs, "latent distribution")?;
        for t in 0..nt {
            if self.w_probs[t].len() != self.n_ctx(true, t, t) {
                return bad(format!("covariate table at t={t} has the wrong number of contexts"));
            }
            for (c, row) in self.w_probs[t].iter().enumerate() {
                if row.len() != self.w_support[t].len() {
                    return bad(format!("covariate table at t={t} row {c} has the wrong width"));
                }
                check_dist(row, &format!("covariate table t={t} row {c}"))?;
            }
            if self.a_probs[t].len() != self.n_ctx(true, t + 1, t) || self.a_probs[t].iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return bad(format!("treatment table at t={t} is malformed"));
            }
            if self.y_mean[t].len() != self.n_ctx(false, t + 1, t + 1) || self.y_mean[t].iter().any(|v| !v.is_finite()) {
                return bad(format!("outcome table at t={t} is malformed"));
            }
        }
        if !(self.y_sd >= 0.0) || !self.y_latent.iter().all(|v| v.is_finite()) {
            return bad("outcome noise and latent coefficients must be finite".into());
        }
        Ok(())
    }

    fn check_regime(&self, regime: &Regime) -> Result<(), OracleError> {
        regime.check(self.n_times(), &[COVARIATE.to_string()])?;
        Ok(())
    }

    fn describe(&self, w: &[usize], a: &[u8]) -> String {
        let ws: Vec<f64> = w.iter().enumerate().map(|(t, &v)| self.w_support[t][v]).collect();
        format!("W={ws:?}, A={a:?}")
    }

    /// `E(Y_t)` under the observed law.
    pub fn observed_mean(&self, t: usize) -> Result<f64, OracleError> {
        if t > self.tau {
            return Err(OracleError::TimeOutOfRange { t, tau: self.tau });
        }
        let mut w = vec![0; t + 1];
        let mut a = vec![0u8; t + 1];
        let mut total = 0.0;
        for u in 0..self.n_u() {
            total += self.u_probs[u] * self.observed_rec(t, 0, u, &mut w, &mut a);
        }
        Ok(total)
    }

    fn observed_rec(&self, t: usize, m: usize, u: usize, w: &mut [usize], a: &mut [u8]) -> f64 {
        let mut s = 0.0;
        for v in 0..self.w_support[m].len() {
            let pw = self.w_prob(m, u, w, a, v);
            if pw == 0.0 {
                continue;
            }
            w[m] = v;
            for x in 0..2u8 {
                let pa = self.a_prob(m, u, w, a, x);
                if pa == 0.0 {
                    continue;
                }
                a[m] = x;
                let rest = if m == t { self.y_mean_at(t, u, w, a) } else { self.observed_rec(t, m + 1, u, w, a) };
                s += pw * pa * rest;
            }
        }
        s
    }

    /// `μ_t = E{Y_t(ā*)}`: the counterfactual mean with treatment forced to
    /// the regime.
    pub fn exact_mu(&self, regime: &Regime, t: usize) -> Result<f64, OracleError> {
        self.check_regime(regime)?;
        if t > self.tau {
            return Err(OracleError::TimeOutOfRange { t, tau: self.tau });
        }
        let mut w = vec![0; t + 1];
        let mut a = vec![0u8; t + 1];
        let mut total = 0.0;
        for u in 0..self.n_u() {
            total += self.u_probs[u] * self.mu_rec(regime, t, 0, u, &mut w, &mut a);
        }
        Ok(total)
    }

    fn mu_rec(&self, regime: &Regime, t: usize, m: usize, u: usize, w: &mut [usize], a: &mut [u8]) -> f64 {
        let mut s = 0.0;
        for v in 0..self.w_support[m].len() {
            let pw = self.w_prob(m, u, w, a, v);
            if pw == 0.0 {
                continue;
            }
            w[m] = v;
            a[m] = regime.decide(m, &PathHistory { support: &self.w_support, w, a });
            let rest = if m == t { self.y_mean_at(t, u, w, a) } else { self.mu_rec(regime, t, m + 1, u, w, a) };
            s += pw * rest;
        }
        s
    }

    /// `φ_{j,k}`: the g-formula for `E(Y_j | W̄_k, Ā_k = ā*_k)` integrated
    /// over the observed covariate law along the regime.
    pub fn exact_phi(&self, regime: &Regime, j: usize, k: usize) -> Result<f64, OracleError> {
        self.check_regime(regime)?;
        if k > self.tau || j > k {
            return Err(OracleError::TimeOutOfRange { t: k.max(j), tau: self.tau });
        }
        let mut w = vec![0; k + 1];
        let mut a = vec![0u8; k + 1];
        let joint = self.u_probs.clone();
        self.phi_rec(regime, j, k, 0, &joint, 1.0, &mut w, &mut a)
    }

    /// `joint[u] = P(U = u, W̄_{m-1} = w̄, Ā_{m-1} = ā*)` along the current
    /// path and `g` the product of observed covariate conditionals so far.
    #[allow(clippy::too_many_arguments)]
    fn phi_rec(
        &self,
        regime: &Regime,
        j: usize,
        k: usize,
        m: usize,
        joint: &[f64],
        g: f64,
        w: &mut [usize],
        a: &mut [u8],
    ) -> Result<f64, OracleError> {
        let prev: f64 = joint.iter().sum();
        let mut s = 0.0;
        for v in 0..self.w_support[m].len() {
            w[m] = v;
            let pw: Vec<f64> = (0..self.n_u()).map(|u| joint[u] * self.w_prob(m, u, w, a, v)).collect();
            let cond = pw.iter().sum::<f64>() / prev;
            let g_next = g * cond;
            if g_next == 0.0 {
                continue;
            }
            a[m] = regime.decide(m, &PathHistory { support: &self.w_support, w, a });
            let pa: Vec<f64> = (0..self.n_u()).map(|u| pw[u] * self.a_prob(m, u, w, a, a[m])).collect();
            let mass: f64 = pa.iter().sum();
            if mass == 0.0 {
                return Err(OracleError::PositivityViolation(self.describe(&w[..=m], &a[..=m])));
            }
            if m == k {
                let ey: f64 = (0..self.n_u()).map(|u| pa[u] * self.y_mean_at(j, u, w, a)).sum::<f64>() / mass;
                s += g_next * ey;
            } else {
                s += self.phi_rec(regime, j, k, m + 1, &pa, g_next, w, a)?;
            }
        }
        Ok(s)
    }

    /// `ψ_t = φ_{0,0} + Σ_{k=1}^t (φ_{k,k} - φ_{k-1,k})`.
    pub fn exact_psi(&self, regime: &Regime, t: usize) -> Result<f64, OracleError> {
        let mut psi = self.exact_phi(regime, 0, 0)?;
        for k in 1..=t {
            psi += self.exact_phi(regime, k, k)? - self.exact_phi(regime, k - 1, k)?;
        }
        Ok(psi)
    }

    /// Draws an observed panel: covariate `W`, treatment `A`, outcome
    /// `Y = mean + θ_t U + N(0, y_sd²)`. The latent stays hidden.
    pub fn simulate(&self, n: usize, seed: u64) -> LongPanel<f64> {
        let nt = self.n_times();
        let mut rng = crate::rng::stream(seed, 0);
        let mut cov = Vec::with_capacity(n * nt);
        let mut treat = Vec::with_capacity(n * nt);
        let mut out = Vec::with_capacity(n * nt);
        let draw_index = |rng: &mut crate::rng::StreamRng, p: &[f64]| {
            let x: f64 = rng.random();
            let mut acc = 0.0;
            for (i, &pi) in p.iter().enumerate() {
                acc += pi;
                if x < acc {
                    return i;
                }
            }
            p.iter().rposition(|&pi| pi > 0.0).unwrap_or(0)
        };
        for _ in 0..n {
            let u = draw_index(&mut rng, &self.u_probs);
            let mut w = vec![0; nt];
            let mut a = vec![0u8; nt];
            for t in 0..nt {
                let row = &self.w_probs[t][self.ctx(Some(u), &w[..t], &a[..t])];
                w[t] = draw_index(&mut rng, row);
                let p1 = self.a_prob(t, u, &w, &a, 1);
                a[t] = u8::from(rng.random::<f64>() < p1);
                let z: f64 = StandardNormal.sample(&mut rng);
                cov.push(self.w_support[t][w[t]]);
                treat.push(a[t]);
                out.push(self.y_mean_at(t, u, &w, &a) + self.y_sd * z);
            }
        }
        LongPanel::from_parts(PanelParts {
            unit_ids: (0..n).map(|i| format!("u{i}")).collect(),
            n_times: nt,
            covariate_names: vec![COVARIATE.into()],
            covariates: cov,
            treatment: treat,
            outcome: out,
            unit_weight: None,
            trials: None,
        })
        .expect("simulated panel is valid")
    }
}

/// Nonparametric plug-in g-formula `φ̂_{j,k}` on a panel with discrete
/// covariates: empirical covariate conditionals along the regime and
/// empirical outcome means within each adherent covariate history. Units
/// are weighted by their fit weights.
pub fn plugin_phi(panel: &LongPanel<f64>, regime: &Regime, j: usize, k: usize) -> Result<f64, OracleError> {
    crate::panel::validate_staggered(panel, regime)?;
    if k >= panel.n_times() || j > k {
        return Err(OracleError::TimeOutOfRange { t: k, tau: panel.tau() });
    }
    let adh = crate::panel::adherence(panel, regime);
    let w = panel.fit_weights();
    let all: Vec<usize> = (0..panel.n_units()).collect();
    plugin_rec(panel, &adh, &w, j, k, 0, &all, 1.0)
}

#[allow(clippy::too_many_arguments)]
fn plugin_rec(
    panel: &LongPanel<f64>,
    adh: &crate::panel::AdherenceMatrix,
    wt: &[f64],
    j: usize,
    k: usize,
    m: usize,
    at_risk: &[usize],
    g: f64,
) -> Result<f64, OracleError> {
    let p = panel.covariate_names().len();
    let key = |i: usize| -> Vec<u64> { (0..p).map(|c| panel.covariate(i, m, c).to_bits()).collect() };
    let mut groups: Vec<(Vec<u64>, Vec<usize>)> = Vec::new();
    for &i in at_risk {
        let kk = key(i);
        match groups.iter_mut().find(|(g, _)| *g == kk) {
            Some((_, v)) => v.push(i),
            None => groups.push((kk, vec![i])),
        }
    }
    let total: f64 = at_risk.iter().map(|&i| wt[i]).sum();
    let mut s = 0.0;
    for (_, members) in groups {
        let share = members.iter().map(|&i| wt[i]).sum::<f64>() / total;
        let followers: Vec<usize> = members.into_iter().filter(|&i| adh.adherent(i, m)).collect();
        if followers.is_empty() {
            return Err(OracleError::PositivityViolation(format!("no adherent units in a covariate cell at time {m}")));
        }
        if m == k {
            let (mut num, mut den) = (0.0, 0.0);
            for &i in &followers {
                num += wt[i] * panel.response(i, j);
                den += wt[i];
            }
            s += g * share * num / den;
        } else {
            s += plugin_rec(panel, adh, wt, j, k, m + 1, &followers, g * share)?;
        }
    }
    Ok(s)
}

/// Plug-in `ψ̂_t` assembled from [`plugin_phi`] cells.
pub fn plugin_psi(panel: &LongPanel<f64>, regime: &Regime, t: usize) -> Result<f64, OracleError> {
    let mut psi = plugin_phi(panel, regime, 0, 0)?;
    for k in 1..=t {
        psi += plugin_phi(panel, regime, k, k)? - plugin_phi(panel, regime, k - 1, k)?;
    }
    Ok(psi)
}

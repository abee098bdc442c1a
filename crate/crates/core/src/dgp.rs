//! Simulation data-generating process with an unmeasured baseline
//! confounder `U_0`, monotone treatment uptake, and its counterfactual
//! oracle.
//!
//! ```text
//! U_0  ~ Bern(expit(ω_0))
//! W_t1 ~ Bern(expit(α_0t + α_1t A_{t-1}))
//! W_t2 ~ N(γ_0t + γ_1t A_{t-1}, 1)
//! A_0 = 0;  A_t = 1 if A_{t-1} = 1, else Bern(expit(δ_0t + δ_1t U + δ_2t W_t1 + δ_3t W_t2 + δ_4t W_t2²))
//! Y_t  ~ N(β_0t + β_1t W_t1 + β_2t W_t2 + β_3t W_t2² + β_4t A_t + θ U, 1)
//! ```
//!
//! `A_{-1}` is taken as 0. Factual and forced runs share every random draw
//! per unit, so a unit that follows the regime has identical factual and
//! counterfactual histories.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::{Matrix, PivotedCholesky};
use crate::panel::{History, LongPanel, PanelParts, Regime};
use crate::rng::{stream, StreamRng};
use crate::scalar::expit;

pub const W1: &str = "W1";
pub const W2: &str = "W2";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpParams {
    pub tau: usize,
    pub omega0: f64,
    pub alpha0: Vec<f64>,
    pub alpha1: Vec<f64>,
    pub gamma0: Vec<f64>,
    pub gamma1: Vec<f64>,
    pub delta0: Vec<f64>,
    pub delta1: Vec<f64>,
    pub delta2: Vec<f64>,
    pub delta3: Vec<f64>,
    pub delta4: Vec<f64>,
    pub beta0: Vec<f64>,
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    pub beta3: Vec<f64>,
    pub beta4: Vec<f64>,
    pub theta: f64,
    /// Time-varying latent coefficients replacing `theta`; only used to
    /// build violations of the parallel trends conditions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_by_time: Option<Vec<f64>>,
}

/// Every entry iid `N(0.2, 1)` from stream `(seed, 0)`, in field order.
pub fn draw_params(seed: u64, tau: usize) -> DgpParams {
    assert!(tau >= 1, "tau must be at least 1");
    let mut rng = stream(seed, 0);
    let dist = Normal::new(0.2, 1.0).expect("valid normal");
    let scalar = |rng: &mut StreamRng| dist.sample(rng);
    let omega0 = scalar(&mut rng);
    let vec = |rng: &mut StreamRng| (0..=tau).map(|_| dist.sample(rng)).collect::<Vec<f64>>();
    let alpha0 = vec(&mut rng);
    let alpha1 = vec(&mut rng);
    let gamma0 = vec(&mut rng);
    let gamma1 = vec(&mut rng);
    let delta0 = vec(&mut rng);
    let delta1 = vec(&mut rng);
    let delta2 = vec(&mut rng);
    let delta3 = vec(&mut rng);
    let delta4 = vec(&mut rng);
    let beta0 = vec(&mut rng);
    let beta1 = vec(&mut rng);
    let beta2 = vec(&mut rng);
    let beta3 = vec(&mut rng);
    let beta4 = vec(&mut rng);
    let theta = dist.sample(&mut rng);
    DgpParams {
        tau,
        omega0,
        alpha0,
        alpha1,
        gamma0,
        gamma1,
        delta0,
        delta1,
        delta2,
        delta3,
        delta4,
        beta0,
        beta1,
        beta2,
        beta3,
        beta4,
        theta,
        theta_by_time: None,
    }
}

impl DgpParams {
    pub fn n_times(&self) -> usize {
        self.tau + 1
    }

    pub fn theta_at(&self, t: usize) -> f64 {
        self.theta_by_time.as_ref().map_or(self.theta, |v| v[t])
    }

    pub fn validate(&self) -> Result<(), String> {
        let nt = self.n_times();
        let vecs = [
            &self.alpha0, &self.alpha1, &self.gamma0, &self.gamma1, &self.delta0, &self.delta1, &self.delta2,
            &self.delta3, &self.delta4, &self.beta0, &self.beta1, &self.beta2, &self.beta3, &self.beta4,
        ];
        if vecs.iter().any(|v| v.len() != nt) || self.theta_by_time.as_ref().is_some_and(|v| v.len() != nt) {
            return Err(format!("every coefficient vector needs {nt} entries"));
        }
        let all_finite = vecs.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.omega0.is_finite()
            && self.theta.is_finite()
            && self.theta_by_time.as_ref().is_none_or(|v| v.iter().all(|x| x.is_finite()));
        if !all_finite {
            return Err("parameters must be finite".into());
        }
        Ok(())
    }

    /// Closed-form `E{Y_t(ā)}` for a static plan (`A_{-1} = 0`).
    pub fn analytic_mu(&self, plan: &[u8]) -> Vec<f64> {
        let eu = expit(self.omega0);
        (0..self.n_times())
            .map(|t| {
                let prev = if t == 0 { 0.0 } else { f64::from(plan[t - 1]) };
                let ew1 = expit(self.alpha0[t] + self.alpha1[t] * prev);
                let m2 = self.gamma0[t] + self.gamma1[t] * prev;
                self.beta0[t]
                    + self.beta1[t] * ew1
                    + self.beta2[t] * m2
                    + self.beta3[t] * (1.0 + m2 * m2)
                    + self.beta4[t] * f64::from(plan[t])
                    + self.theta_at(t) * eu
            })
            .collect()
    }
}

/// All random inputs for one unit.
#[derive(Debug, Clone)]
struct UnitDraws {
    u: f64,
    w1: Vec<f64>,
    w2: Vec<f64>,
    a: Vec<f64>,
    y: Vec<f64>,
}

impl UnitDraws {
    fn draw(rng: &mut StreamRng, nt: usize) -> Self {
        let u = rng.random::<f64>();
        let mut d = UnitDraws { u, w1: Vec::with_capacity(nt), w2: Vec::with_capacity(nt), a: Vec::with_capacity(nt), y: Vec::with_capacity(nt) };
        for _ in 0..nt {
            d.w1.push(rng.random());
            d.w2.push(StandardNormal.sample(rng));
            d.a.push(rng.random());
            d.y.push(StandardNormal.sample(rng));
        }
        d
    }
}

/// One unit's realized path.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitPath {
    pub u: u8,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub a: Vec<u8>,
    pub y: Vec<f64>,
}

struct PartialHistory<'a> {
    w1: &'a [f64],
    w2: &'a [f64],
    a: &'a [u8],
}

impl History for PartialHistory<'_> {
    fn covariate(&self, name: &str, time: usize) -> Option<f64> {
        match name {
            W1 => self.w1.get(time).copied(),
            W2 => self.w2.get(time).copied(),
            _ => None,
        }
    }
    fn treatment(&self, time: usize) -> u8 {
        self.a[time]
    }
}

fn realize(p: &DgpParams, d: &UnitDraws, forcing: Option<&Regime>) -> UnitPath {
    let nt = p.n_times();
    let u = u8::from(d.u < expit(p.omega0));
    let uf = f64::from(u);
    let mut path = UnitPath { u, w1: Vec::with_capacity(nt), w2: Vec::with_capacity(nt), a: Vec::with_capacity(nt), y: Vec::with_capacity(nt) };
    for t in 0..nt {
        let prev = if t == 0 { 0.0 } else { f64::from(path.a[t - 1]) };
        let w1 = f64::from(u8::from(d.w1[t] < expit(p.alpha0[t] + p.alpha1[t] * prev)));
        let w2 = p.gamma0[t] + p.gamma1[t] * prev + d.w2[t];
        path.w1.push(w1);
        path.w2.push(w2);
        let a = match forcing {
            Some(r) => r.decide(t, &PartialHistory { w1: &path.w1, w2: &path.w2, a: &path.a }),
            None if t == 0 => 0,
            None if prev == 1.0 => 1,
            None => {
                let lin = p.delta0[t] + p.delta1[t] * uf + p.delta2[t] * w1 + p.delta3[t] * w2 + p.delta4[t] * w2 * w2;
                u8::from(d.a[t] < expit(lin))
            }
        };
        path.a.push(a);
        let mean = p.beta0[t] + p.beta1[t] * w1 + p.beta2[t] * w2 + p.beta3[t] * w2 * w2 + p.beta4[t] * f64::from(a) + p.theta_at(t) * uf;
        path.y.push(mean + d.y[t]);
    }
    path
}

fn unit_stream(seed: u64) -> StreamRng {
    stream(seed, 0)
}

/// Factual (and optionally forced) paths for `n` units from `seed`.
pub fn simulate_paths(n: usize, params: &DgpParams, seed: u64, forcing: Option<&Regime>) -> Vec<UnitPath> {
    let mut rng = unit_stream(seed);
    (0..n).map(|_| realize(params, &UnitDraws::draw(&mut rng, params.n_times()), forcing)).collect()
}

/// Observed panel with covariates `W1`, `W2`; the latent is dropped.
pub fn simulate_observed(n: usize, params: &DgpParams, seed: u64) -> LongPanel<f64> {
    paths_to_panel(&simulate_paths(n, params, seed, None), params.n_times())
}

pub fn paths_to_panel(paths: &[UnitPath], nt: usize) -> LongPanel<f64> {
    let n = paths.len();
    let mut cov = Vec::with_capacity(n * nt * 2);
    let mut treat = Vec::with_capacity(n * nt);
    let mut out = Vec::with_capacity(n * nt);
    for p in paths {
        for t in 0..nt {
            cov.push(p.w1[t]);
            cov.push(p.w2[t]);
            treat.push(p.a[t]);
            out.push(p.y[t]);
        }
    }
    LongPanel::from_parts(PanelParts {
        unit_ids: (1..=n).map(|i| i.to_string()).collect(),
        n_times: nt,
        covariate_names: vec![W1.into(), W2.into()],
        covariates: cov,
        treatment: treat,
        outcome: out,
        unit_weight: None,
        trials: None,
    })
    .expect("simulated panel is valid")
}

/// Monte Carlo means of `Y_t` with their standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualMeans {
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
}

/// `Ê{Y_t(regime)}` from `n` forced draws; `None` leaves treatment to the
/// observational law.
pub fn simulate_counterfactual(n: usize, params: &DgpParams, regime: Option<&Regime>, seed: u64) -> CounterfactualMeans {
    let nt = params.n_times();
    let mut rng = unit_stream(seed);
    let mut sum = vec![0.0; nt];
    let mut sq = vec![0.0; nt];
    for _ in 0..n {
        let path = realize(params, &UnitDraws::draw(&mut rng, nt), regime);
        for t in 0..nt {
            sum[t] += path.y[t];
            sq[t] += path.y[t] * path.y[t];
        }
    }
    let nf = n as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
    let se = (0..nt).map(|t| ((sq[t] / nf - mean[t] * mean[t]).max(0.0) * nf / (nf - 1.0) / nf).sqrt()).collect();
    CounterfactualMeans { mean, se }
}

/// Adherence coefficient of one probe regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeCoefficient {
    pub t: usize,
    pub k: usize,
    pub n_at_risk: usize,
    pub coefficient: f64,
    pub se: f64,
}

impl ProbeCoefficient {
    pub fn z(&self) -> f64 {
        self.coefficient / self.se
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub coefficients: Vec<ProbeCoefficient>,
    pub max_abs_z: f64,
    /// Every coefficient within 3 standard errors of 0.
    pub pass: bool,
}

/// Checks parallel trends for the never-treated regime on matched factual
/// and counterfactual draws: among units untreated through `k - 1`, the
/// counterfactual trend `Y_t(0̄) - Y_{t-1}(0̄)` (for `t ≥ k`) is regressed
/// on `(W_s1, W_s2, W_s2²)` for `s ≤ k` and on the indicator of remaining
/// untreated at `k`. The indicator's coefficient and its robust standard
/// error are reported.
pub fn probe_parallel_trends(params: &DgpParams, n: usize, seed: u64) -> ProbeReport {
    let nt = params.n_times();
    let never = Regime::always(0, nt);
    let mut rng = unit_stream(seed);
    let mut factual = Vec::with_capacity(n);
    let mut forced = Vec::with_capacity(n);
    for _ in 0..n {
        let d = UnitDraws::draw(&mut rng, nt);
        factual.push(realize(params, &d, None));
        forced.push(realize(params, &d, Some(&never)));
    }
    let mut coefficients = Vec::new();
    for k in 1..nt {
        let at_risk: Vec<usize> = (0..n).filter(|&i| factual[i].a[k - 1] == 0).collect();
        let p = 3 * (k + 1) + 2;
        let row = |i: usize| -> Vec<f64> {
            let f = &factual[i];
            let mut r = Vec::with_capacity(p);
            r.push(1.0);
            for s in 0..=k {
                r.push(f.w1[s]);
                r.push(f.w2[s]);
                r.push(f.w2[s] * f.w2[s]);
            }
            r.push(f64::from(u8::from(f.a[k] == 0)));
            r
        };
        let rows: Vec<Vec<f64>> = at_risk.iter().map(|&i| row(i)).collect();
        for t in k..nt {
            let y: Vec<f64> = at_risk.iter().map(|&i| forced[i].y[t] - forced[i].y[t - 1]).collect();
            if let Some((b, se)) = ols_last_coefficient(&rows, &y) {
                coefficients.push(ProbeCoefficient { t, k, n_at_risk: at_risk.len(), coefficient: b, se });
            }
        }
    }
    let max_abs_z = coefficients.iter().map(|c| c.z().abs()).fold(0.0, f64::max);
    ProbeReport { pass: max_abs_z <= 3.0, max_abs_z, coefficients }
}

/// OLS coefficient of the last column with its heteroskedasticity-robust
/// (HC0) standard error.
fn ols_last_coefficient(rows: &[Vec<f64>], y: &[f64]) -> Option<(f64, f64)> {
    let p = rows.first()?.len();
    let mut xtx = Matrix::<f64>::zeros(p, p);
    let mut xty = vec![0.0; p];
    for (r, &yi) in rows.iter().zip(y) {
        for a in 0..p {
            xty[a] += r[a] * yi;
            for b in 0..=a {
                xtx.row_mut(a)[b] += r[a] * r[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            let v = xtx[(a, b)];
            xtx.row_mut(b)[a] = v;
        }
    }
    let chol = PivotedCholesky::new(&xtx);
    if !chol.is_full_rank() {
        return None;
    }
    let beta = chol.solve(&xty);
    let mut meat = Matrix::<f64>::zeros(p, p);
    for (r, &yi) in rows.iter().zip(y) {
        let e = yi - crate::linalg::dot(r, &beta);
        let e2 = e * e;
        for a in 0..p {
            for b in 0..=a {
                meat.row_mut(a)[b] += e2 * r[a] * r[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            let v = meat[(a, b)];
            meat.row_mut(b)[a] = v;
        }
    }
    let bread = chol.inverse();
    let cov = bread.matmul(&meat).matmul(&bread);
    Some((beta[p - 1], cov[(p - 1, p - 1)].sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_are_deterministic_with_the_right_shape() {
        let a = draw_params(3, 5);
        assert_eq!(a, draw_params(3, 5));
        assert_ne!(a, draw_params(4, 5));
        assert_eq!(a.beta4.len(), 6);
        a.validate().unwrap();
    }

    #[test]
    fn draws_center_on_the_stated_mean() {
        let mut all = Vec::new();
        for s in 0..1400 {
            let p = draw_params(s, 5);
            all.push(p.omega0);
            all.push(p.theta);
            for v in [&p.alpha0, &p.alpha1, &p.gamma0, &p.gamma1, &p.delta0, &p.delta1, &p.delta2, &p.delta3, &p.delta4, &p.beta0, &p.beta1, &p.beta2, &p.beta3, &p.beta4] {
                all.extend_from_slice(v);
            }
        }
        assert!(all.len() >= 100_000);
        let m = crate::stats::mean(&all);
        assert!((m - 0.2).abs() < 0.01, "{m}");
    }

    #[test]
    fn treatment_is_monotone_and_starts_untreated() {
        let p = draw_params(1, 5);
        for path in simulate_paths(2000, &p, 9, None) {
            assert_eq!(path.a[0], 0);
            assert!(path.a.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn followers_share_factual_and_forced_histories() {
        let p = draw_params(2, 5);
        let never = Regime::always(0, 6);
        let f = simulate_paths(3000, &p, 5, None);
        let c = simulate_paths(3000, &p, 5, Some(&never));
        for (a, b) in f.iter().zip(&c) {
            let through = a.a.iter().take_while(|&&x| x == 0).count();
            assert_eq!(a.w1[..through], b.w1[..through]);
            assert_eq!(a.w2[..through], b.w2[..through]);
            assert_eq!(a.y[..through], b.y[..through]);
        }
    }
}

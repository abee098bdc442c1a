use serde::{Deserialize, Serialize};

use super::spec::check_pair;
use super::{Family, GlmError, Link};
use crate::linalg::{Matrix, PivotedCholesky};
use crate::scalar::{expit, Real};

/// IRLS stopping rule: relative deviance change below `tolerance`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iter: 100, tolerance: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FitWarning {
    /// Fitted probabilities numerically 0 or 1: (quasi-)separation.
    BoundaryProbabilities { count: usize },
    /// Some |coefficient| exceeds the given magnitude.
    LargeCoefficient { index: usize, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct FitResult<T> {
    pub coefficients: Vec<T>,
    pub converged: bool,
    pub iterations: usize,
    pub deviance: T,
    pub family: Family,
    pub link: Link,
    /// `max_j |Σ_i x_ij w_i (y_i - μ_i)| / n` at the solution.
    pub max_score: T,
    pub warnings: Vec<FitWarning>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Linear,
    Response,
}

const PROB_EPS: f64 = 1e-10;
const LARGE_COEFFICIENT: f64 = 30.0;
/// Besides the deviance rule, convergence requires the per-row score to be
/// this small (relative to the mean prior weight when that exceeds one).
const SCORE_TOLERANCE: f64 = 1e-10;

/// Factor of `Xᵀ diag(w) X`, reusable for weighted least squares with many
/// responses over the same design and weights.
#[derive(Debug, Clone)]
pub struct WlsFactor<T> {
    chol: PivotedCholesky<T>,
}

impl<T: Real> WlsFactor<T> {
    pub fn new(x: &Matrix<T>, weights: &[T]) -> Result<Self, GlmError> {
        let chol = PivotedCholesky::new(&x.weighted_gram(weights));
        if !chol.is_full_rank() {
            return Err(GlmError::RankDeficient { rank: chol.rank(), columns: x.ncols() });
        }
        Ok(Self { chol })
    }

    /// Weighted least-squares coefficients for response `y`.
    pub fn coefficients(&self, x: &Matrix<T>, weights: &[T], y: &[T]) -> Vec<T> {
        self.chol.solve(&x.weighted_tmul_vec(weights, y))
    }
}

fn check_inputs<T: Real>(x: &Matrix<T>, y: &[T], w: &[T], offset: &[T]) -> Result<(), GlmError> {
    let n = x.nrows();
    for len in [y.len(), w.len(), offset.len()] {
        if len != n {
            return Err(GlmError::DimensionMismatch { expected: n, found: len });
        }
    }
    if n == 0 {
        return Err(GlmError::EmptyData);
    }
    if w.iter().any(|v| !(v.is_finite() && *v >= T::zero())) {
        return Err(GlmError::NonFinite("weights must be finite and nonnegative".into()));
    }
    if y.iter().chain(offset).chain(x.as_slice()).any(|v| !v.is_finite()) {
        return Err(GlmError::NonFinite("design, response and offset must be finite".into()));
    }
    Ok(())
}

fn binomial_deviance<T: Real>(y: &[T], mu: &[T], w: &[T]) -> T {
    let two = T::lit(2.0);
    let term = |a: T, b: T| if a > T::zero() { a * (a / b).ln() } else { T::zero() };
    y.iter()
        .zip(mu)
        .zip(w)
        .map(|((&yi, &mi), &wi)| two * wi * (term(yi, mi) + term(T::one() - yi, T::one() - mi)))
        .sum()
}

fn score<T: Real>(x: &Matrix<T>, y: &[T], mu: &[T], w: &[T]) -> T {
    let r: Vec<T> = y.iter().zip(mu).map(|(&a, &b)| a - b).collect();
    let s = x.weighted_tmul_vec(w, &r);
    let n = T::from_usize_lossy(x.nrows());
    s.into_iter().fold(T::zero(), |m, v| m.max(v.abs())) / n
}

/// Weighted GLM by iteratively reweighted least squares.
pub fn fit_glm<T: Real>(
    x: &Matrix<T>,
    y: &[T],
    weights: &[T],
    offset: &[T],
    family: Family,
    link: Link,
) -> Result<FitResult<T>, GlmError> {
    fit_glm_with(x, y, weights, offset, family, link, FitOptions::default())
}

pub fn fit_glm_with<T: Real>(
    x: &Matrix<T>,
    y: &[T],
    weights: &[T],
    offset: &[T],
    family: Family,
    link: Link,
    opts: FitOptions,
) -> Result<FitResult<T>, GlmError> {
    check_pair(family, link)?;
    check_inputs(x, y, weights, offset)?;
    match family {
        Family::Gaussian => fit_gaussian(x, y, weights, offset),
        Family::Binomial | Family::Quasibinomial => {
            if y.iter().any(|&v| v < T::zero() || v > T::one()) {
                return Err(GlmError::NonFinite("binomial responses must lie in [0, 1]".into()));
            }
            fit_logit(x, y, weights, offset, family, opts)
        }
    }
}

fn fit_gaussian<T: Real>(x: &Matrix<T>, y: &[T], w: &[T], offset: &[T]) -> Result<FitResult<T>, GlmError> {
    let factor = WlsFactor::new(x, w)?;
    let z: Vec<T> = y.iter().zip(offset).map(|(&a, &o)| a - o).collect();
    let beta = factor.coefficients(x, w, &z);
    let mu: Vec<T> = x.mul_vec(&beta).into_iter().zip(offset).map(|(e, &o)| e + o).collect();
    let deviance = y.iter().zip(&mu).zip(w).map(|((&a, &m), &wi)| wi * (a - m) * (a - m)).sum();
    Ok(FitResult {
        max_score: score(x, y, &mu, w),
        coefficients: beta,
        converged: true,
        iterations: 1,
        deviance,
        family: Family::Gaussian,
        link: Link::Identity,
        warnings: Vec::new(),
    })
}

fn fit_logit<T: Real>(
    x: &Matrix<T>,
    y: &[T],
    w: &[T],
    offset: &[T],
    family: Family,
    opts: FitOptions,
) -> Result<FitResult<T>, GlmError> {
    let n = x.nrows();
    let p = x.ncols();
    let prior = PivotedCholesky::new(&x.weighted_gram(w));
    if !prior.is_full_rank() {
        return Err(GlmError::RankDeficient { rank: prior.rank(), columns: p });
    }
    let eps = T::lit(PROB_EPS);
    let clamp = |m: T| m.max(eps).min(T::one() - eps);
    let half = T::lit(0.5);

    // Start from mu = (w y + 1/2) / (w + 1), as common GLM software does,
    // ignoring the offset for the first working response.
    let mut mu: Vec<T> = y
        .iter()
        .zip(w)
        .map(|(&yi, &wi)| clamp((wi * yi + half) / (wi + T::one())))
        .collect();
    let mut eta: Vec<T> = mu.iter().map(|&m| (m / (T::one() - m)).ln()).collect();
    let mut dev_old = binomial_deviance(y, &mu, w);
    let mut beta: Option<Vec<T>> = None;
    let mut work_w = vec![T::zero(); n];
    let mut z = vec![T::zero(); n];
    let mean_w = w.iter().copied().sum::<T>() / T::from_usize_lossy(n);
    // Narrow scalar types cannot reach double-precision tolerances.
    let score_tol = T::lit(SCORE_TOLERANCE).max(T::epsilon() * T::lit(1e3)) * mean_w.max(T::one());
    let dev_tol = T::lit(opts.tolerance).max(T::epsilon() * T::lit(10.0));
    // Criteria must hold on two consecutive iterations: the extra Newton
    // step takes the coefficients to machine precision.
    let mut hits = 0;

    for iter in 1..=opts.max_iter {
        for i in 0..n {
            let v = mu[i] * (T::one() - mu[i]);
            work_w[i] = w[i] * v;
            z[i] = eta[i] - offset[i] + (y[i] - mu[i]) / v;
        }
        let chol = PivotedCholesky::with_tolerance(&x.weighted_gram(&work_w), 0.0);
        if !chol.is_full_rank() {
            return Err(GlmError::NotConverged { iterations: iter });
        }
        let mut cand = chol.solve(&x.weighted_tmul_vec(&work_w, &z));
        let mut dev;
        let mut halvings = 0;
        loop {
            eta = x.mul_vec(&cand).into_iter().zip(offset).map(|(e, &o)| e + o).collect();
            mu = eta.iter().map(|&e| clamp(expit(e))).collect();
            dev = binomial_deviance(y, &mu, w);
            if dev.is_finite() {
                break;
            }
            let Some(prev) = &beta else {
                return Err(GlmError::NotConverged { iterations: iter });
            };
            halvings += 1;
            if halvings > 30 {
                return Err(GlmError::NotConverged { iterations: iter });
            }
            cand = cand.iter().zip(prev).map(|(&c, &b)| (c + b) * half).collect();
        }
        beta = Some(cand);
        let rel = (dev - dev_old).abs() / (dev.abs() + T::lit(0.1));
        hits = if rel < dev_tol && score(x, y, &mu, w) <= score_tol { hits + 1 } else { 0 };
        if hits >= 2 {
            let coefficients = beta.expect("set above");
            let mut warnings = Vec::new();
            let boundary = mu
                .iter()
                .zip(w)
                .filter(|(&m, &wi)| wi > T::zero() && (m <= T::lit(10.0 * PROB_EPS) || m >= T::one() - T::lit(10.0 * PROB_EPS)))
                .count();
            if boundary > 0 {
                warnings.push(FitWarning::BoundaryProbabilities { count: boundary });
            }
            for (index, c) in coefficients.iter().enumerate() {
                if c.abs().as_f64() > LARGE_COEFFICIENT {
                    warnings.push(FitWarning::LargeCoefficient { index, value: c.as_f64() });
                }
            }
            return Ok(FitResult {
                max_score: score(x, y, &mu, w),
                coefficients,
                converged: true,
                iterations: iter,
                deviance: dev,
                family,
                link: Link::Logit,
                warnings,
            });
        }
        dev_old = dev;
    }
    Err(GlmError::NotConverged { iterations: opts.max_iter })
}

/// Intercept-only logistic fit with a fixed offset: solves
/// `Σ w (y - expit(o + ε)) = 0` by Newton's method from `ε = 0`, falling
/// back to bisection whenever a step leaves the current bracket.
pub fn fit_logit_intercept<T: Real>(y: &[T], weights: &[T], offset: &[T], family: Family) -> Result<FitResult<T>, GlmError> {
    let x = Matrix::from_row_major(y.len(), 1, vec![T::one(); y.len()]);
    check_pair(family, Link::Logit)?;
    check_inputs(&x, y, weights, offset)?;
    if family == Family::Gaussian {
        return Err(GlmError::InvalidSpec("intercept logit fit needs a binomial family".into()));
    }
    if y.iter().any(|&v| v < T::zero() || v > T::one()) {
        return Err(GlmError::NonFinite("binomial responses must lie in [0, 1]".into()));
    }
    let sw: T = weights.iter().copied().sum();
    let tol = T::lit(SCORE_TOLERANCE).max(T::epsilon() * T::lit(1e3)) * sw;
    let eval = |e: T| {
        let (mut s, mut h) = (T::zero(), T::zero());
        for ((&yi, &wi), &oi) in y.iter().zip(weights).zip(offset) {
            let p = expit(oi + e);
            s += wi * (yi - p);
            h += wi * p * (T::one() - p);
        }
        (s, h)
    };
    let (mut lo, mut hi) = (T::neg_infinity(), T::infinity());
    let mut e = T::zero();
    let max_iter = FitOptions::default().max_iter * 2;
    for iter in 1..=max_iter {
        let (s, h) = eval(e);
        if s.abs() <= tol || (hi - lo) <= T::epsilon() * (T::one() + e.abs()) {
            let mu: Vec<T> = offset.iter().map(|&o| expit(o + e)).collect();
            return Ok(FitResult {
                max_score: s.abs() / T::from_usize_lossy(y.len()),
                coefficients: vec![e],
                converged: true,
                iterations: iter,
                deviance: binomial_deviance(y, &mu, weights),
                family,
                link: Link::Logit,
                warnings: Vec::new(),
            });
        }
        if s > T::zero() {
            lo = e;
        } else {
            hi = e;
        }
        let newton = e + s / h;
        e = if h > T::zero() && newton > lo && newton < hi && newton.is_finite() {
            newton
        } else if lo.is_finite() && hi.is_finite() {
            (lo + hi) * T::lit(0.5)
        } else if lo.is_finite() {
            lo + T::one().max(lo.abs())
        } else {
            hi - T::one().max(hi.abs())
        };
        if e.abs() > T::lit(1e6) {
            break;
        }
    }
    Err(GlmError::NotConverged { iterations: max_iter })
}

/// Linear predictor `Xβ + offset`, or its inverse link.
pub fn predict<T: Real>(fit: &FitResult<T>, x: &Matrix<T>, offset: &[T], scale: Scale) -> Result<Vec<T>, GlmError> {
    if x.ncols() != fit.coefficients.len() {
        return Err(GlmError::DimensionMismatch { expected: fit.coefficients.len(), found: x.ncols() });
    }
    if offset.len() != x.nrows() {
        return Err(GlmError::DimensionMismatch { expected: x.nrows(), found: offset.len() });
    }
    let eta = x.mul_vec(&fit.coefficients).into_iter().zip(offset).map(|(e, &o)| e + o);
    Ok(match (scale, fit.link) {
        (Scale::Response, Link::Logit) => eta.map(expit).collect(),
        _ => eta.collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::solve_dense;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn gaussian_mean() {
        let x = Matrix::<f64>::from_rows(&[vec![1.0], vec![1.0], vec![1.0]]);
        let f = fit_glm(&x, &[1.0, 2.0, 3.0], &[1.0; 3], &[0.0; 3], Family::Gaussian, Link::Identity).unwrap();
        assert!((f.coefficients[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn logistic_intercept_is_logit_proportion() {
        let x = Matrix::<f64>::from_rows(&vec![vec![1.0]; 4]);
        let f = fit_glm(&x, &[1.0, 1.0, 1.0, 0.0], &[1.0; 4], &[0.0; 4], Family::Binomial, Link::Logit).unwrap();
        assert!((f.coefficients[0] - 3f64.ln()).abs() < 1e-10);
        assert!(f.max_score < 1e-8);
    }

    #[test]
    fn gaussian_matches_normal_equations() {
        let mut rng = crate::rng::stream(5, 0);
        let n = 40;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![1.0, rng.random::<f64>(), rng.random::<f64>() * 3.0]).collect();
        let x = Matrix::from_rows(&rows);
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.1).collect();
        let f = fit_glm(&x, &y, &w, &vec![0.0; n], Family::Gaussian, Link::Identity).unwrap();
        let reference = solve_dense(&x.weighted_gram(&w), &x.weighted_tmul_vec(&w, &y)).unwrap();
        for (a, b) in f.coefficients.iter().zip(&reference) {
            assert!((a - b).abs() < 1e-10 * b.abs().max(1.0));
        }
        let fitted = predict(&f, &x, &vec![0.0; n], Scale::Response).unwrap();
        let r: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
        assert!(x.weighted_tmul_vec(&w, &r).iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn rank_deficiency_detected() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]);
        let e = fit_glm(&x, &[1.0, 0.0, 1.0], &[1.0; 3], &[0.0; 3], Family::Binomial, Link::Logit);
        assert!(matches!(e, Err(GlmError::RankDeficient { rank: 1, columns: 2 })));
    }

    #[test]
    fn separation_is_flagged() {
        let x = Matrix::from_rows(&[vec![1.0, -2.0], vec![1.0, -1.0], vec![1.0, 1.0], vec![1.0, 2.0]]);
        match fit_glm(&x, &[0.0, 0.0, 1.0, 1.0], &[1.0; 4], &[0.0; 4], Family::Binomial, Link::Logit) {
            Ok(f) => assert!(!f.warnings.is_empty(), "{f:?}"),
            Err(GlmError::NotConverged { .. }) => {}
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn predict_contracts() {
        let fit = FitResult {
            coefficients: vec![0.0, 0.0],
            converged: true,
            iterations: 1,
            deviance: 0.0,
            family: Family::Binomial,
            link: Link::Logit,
            max_score: 0.0,
            warnings: vec![],
        };
        let x = Matrix::from_rows(&[vec![1.0, 3.0], vec![1.0, -2.0]]);
        assert_eq!(predict(&fit, &x, &[0.0, 0.0], Scale::Response).unwrap(), vec![0.5, 0.5]);
        let bad = Matrix::from_rows(&[vec![1.0]]);
        assert!(matches!(predict(&fit, &bad, &[0.0], Scale::Linear), Err(GlmError::DimensionMismatch { .. })));
        let g = FitResult { coefficients: vec![1.0, 2.0], link: Link::Identity, family: Family::Gaussian, ..fit };
        assert_eq!(predict(&g, &x, &[0.5, 0.0], Scale::Response).unwrap(), vec![7.5, -3.0]);
    }

    #[test]
    fn quasibinomial_fractional_with_offset() {
        let mut rng = crate::rng::stream(9, 0);
        let n = 200;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![1.0, rng.random::<f64>() - 0.5]).collect();
        let x = Matrix::from_rows(&rows);
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let off: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0).collect();
        let f = fit_glm(&x, &y, &w, &off, Family::Quasibinomial, Link::Logit).unwrap();
        assert!(f.max_score < 1e-8, "{}", f.max_score);
    }

    #[test]
    fn f32_fit() {
        let x = Matrix::from_rows(&vec![vec![1.0f32]; 4]);
        let f = fit_glm(&x, &[1.0f32, 1.0, 1.0, 0.0], &[1.0; 4], &[0.0; 4], Family::Binomial, Link::Logit).unwrap();
        assert!((f.coefficients[0] - 3f32.ln()).abs() < 1e-5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn weighted_intercept_logit(ys in prop::collection::vec(0u8..2, 3..30), seed in 0u64..1000) {
            prop_assume!(ys.contains(&0) && ys.contains(&1));
            let mut rng = crate::rng::stream(seed, 1);
            let w: Vec<f64> = ys.iter().map(|_| rng.random::<f64>() + 0.05).collect();
            let y: Vec<f64> = ys.iter().map(|&v| f64::from(v)).collect();
            let n = y.len();
            let x = Matrix::from_rows(&vec![vec![1.0]; n]);
            let f = fit_glm(&x, &y, &w, &vec![0.0; n], Family::Binomial, Link::Logit).unwrap();
            let p = crate::stats::weighted_mean(&y, &w);
            prop_assert!((f.coefficients[0] - (p / (1.0 - p)).ln()).abs() < 1e-10);
        }
    }
}

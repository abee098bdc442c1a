//! Small statistics toolkit: moments, the normal distribution, and the
//! Lilliefors normality test used by the simulation summaries.

use crate::scalar::Real;

pub fn weighted_mean<T: Real>(values: &[T], weights: &[T]) -> T {
    let mut num = T::zero();
    let mut den = T::zero();
    for (&v, &w) in values.iter().zip(weights) {
        num += v * w;
        den += w;
    }
    num / den
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance with `n - 1` denominator.
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
}

pub fn std_dev(values: &[f64]) -> f64 {
    variance(values).sqrt()
}

/// Type-7 sample quantile (linear interpolation between order statistics).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal quantile. Acklam's rational approximation followed by one
/// Halley refinement against `erfc`, which brings it to full double precision.
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "normal_quantile requires 0 < p < 1");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    x - u / (1.0 + x * u / 2.0)
}

/// Outcome of a Lilliefors (Kolmogorov–Smirnov with estimated mean and
/// variance) normality test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LillieforsTest {
    pub statistic: f64,
    pub p_value: f64,
}

/// Minimum sample size for the Lilliefors test.
pub const LILLIEFORS_MIN_N: usize = 5;

/// Lilliefors test; p-value from the Dallal–Wilkinson approximation, with
/// the Stephens-modified statistic used above p = 0.1. `None` for fewer than
/// [`LILLIEFORS_MIN_N`] observations or zero variance.
pub fn lilliefors(values: &[f64]) -> Option<LillieforsTest> {
    let n = values.len();
    if n < LILLIEFORS_MIN_N {
        return None;
    }
    let m = mean(values);
    let s = std_dev(values);
    if !(s > 0.0) {
        return None;
    }
    let mut z: Vec<f64> = values.iter().map(|v| normal_cdf((v - m) / s)).collect();
    z.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut d_plus = f64::NEG_INFINITY;
    let mut d_minus = f64::NEG_INFINITY;
    for (i, &p) in z.iter().enumerate() {
        d_plus = d_plus.max((i + 1) as f64 / nf - p);
        d_minus = d_minus.max(p - i as f64 / nf);
    }
    let k = d_plus.max(d_minus);
    let (kd, nd) = if n <= 100 {
        (k, nf)
    } else {
        (k * (nf / 100.0).powf(0.49), 100.0)
    };
    let mut p = (-7.01256 * kd * kd * (nd + 2.78019) + 2.99587 * kd * (nd + 2.78019).sqrt()
        - 0.122119
        + 0.974598 / nd.sqrt()
        + 1.67997 / nd)
        .exp();
    if p > 0.1 {
        let kk = (nf.sqrt() - 0.01 + 0.85 / nf.sqrt()) * k;
        p = if kk <= 0.302 {
            1.0
        } else if kk <= 0.5 {
            2.76773 - 19.828315 * kk + 80.709644 * kk.powi(2) - 138.55152 * kk.powi(3)
                + 81.218052 * kk.powi(4)
        } else if kk <= 0.9 {
            -4.901232 + 40.662806 * kk - 97.490286 * kk.powi(2) + 94.029866 * kk.powi(3)
                - 32.355711 * kk.powi(4)
        } else if kk <= 1.31 {
            6.198765 - 19.558097 * kk + 23.186922 * kk.powi(2) - 12.234627 * kk.powi(3)
                + 2.423045 * kk.powi(4)
        } else {
            0.0
        };
    }
    Some(LillieforsTest {
        statistic: k,
        p_value: p.clamp(0.0, 1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Exp, StandardNormal};

    #[test]
    fn normal_quantile_matches_known_values() {
        assert!((normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
        assert!((normal_quantile(0.5)).abs() < 1e-15);
        assert!((normal_quantile(0.001) + 3.090_232_306_167_813_5).abs() < 1e-10);
        for &p in &[1e-8, 0.01, 0.2, 0.7, 0.999] {
            assert!((normal_cdf(normal_quantile(p)) - p).abs() < 1e-13 * p.max(1e-3));
        }
    }

    #[test]
    fn lilliefors_accepts_normal_rejects_exponential() {
        let mut rng = crate::rng::stream(11, 0);
        let x: Vec<f64> = (0..500).map(|_| rng.sample(StandardNormal)).collect();
        let t = lilliefors(&x).unwrap();
        assert!(t.p_value > 0.01, "{t:?}");
        let e = Exp::new(1.0).unwrap();
        let y: Vec<f64> = (0..500).map(|_| e.sample(&mut rng)).collect();
        let t = lilliefors(&y).unwrap();
        assert!(t.p_value < 0.001, "{t:?}");
    }

    #[test]
    fn lilliefors_statistic_hand_case() {
        // Symmetric 5-point sample: mean 0, sd sqrt(2.5).
        let x = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let t = lilliefors(&x).unwrap();
        let s = 2.5f64.sqrt();
        let expected = (1..=5)
            .map(|i| {
                let p = normal_cdf(x[i - 1] / s);
                (i as f64 / 5.0 - p).max(p - (i - 1) as f64 / 5.0)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((t.statistic - expected).abs() < 1e-15);
        assert!(lilliefors(&x[..3]).is_none());
    }

    #[test]
    fn quantile_interpolates() {
        let s = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(quantile(&s, 0.5), 1.5);
        assert_eq!(quantile(&s, 1.0), 3.0);
    }
}

use crate::scalar::Real;

/// Natural cubic spline basis (truncated power form) without the constant
/// column. Inputs are rescaled to `[0, 1]` over the boundary knots; the
/// basis is linear outside them.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalSpline<T> {
    lo: T,
    span: T,
    /// All knots on the unit scale, boundaries included, ascending.
    knots: Vec<T>,
}

impl<T: Real> NaturalSpline<T> {
    /// Basis with the given boundary and interior knots (original scale).
    pub fn new(lower: T, upper: T, interior: &[T]) -> Self {
        let span = if upper > lower { upper - lower } else { T::one() };
        let mut knots = Vec::with_capacity(interior.len() + 2);
        knots.push(T::zero());
        knots.extend(interior.iter().map(|&k| (k - lower) / span));
        knots.push((upper - lower) / span);
        Self { lo: lower, span, knots }
    }

    /// Basis over the integer time grid `0..n_times` with `df` columns:
    /// boundary knots at the first and last time, interior knots at the
    /// `j / df` quantiles of the grid.
    pub fn for_time_grid(n_times: usize, df: usize) -> Self {
        assert!(df >= 1, "df must be positive");
        let grid: Vec<f64> = (0..n_times).map(|t| t as f64).collect();
        let interior: Vec<T> = (1..df)
            .map(|j| T::lit(crate::stats::quantile(&grid, j as f64 / df as f64)))
            .collect();
        Self::new(T::zero(), T::from_usize_lossy(n_times.saturating_sub(1)), &interior)
    }

    pub fn df(&self) -> usize {
        self.knots.len() - 1
    }

    /// Writes the `df` basis values at `x` into `out`.
    pub fn eval_into(&self, x: T, out: &mut [T]) {
        let s = (x - self.lo) / self.span;
        let kk = self.knots.len();
        out[0] = s;
        if kk == 2 {
            return;
        }
        let last = self.knots[kk - 1];
        let cube = |v: T| if v > T::zero() { v * v * v } else { T::zero() };
        let d = |k: usize| (cube(s - self.knots[k]) - cube(s - last)) / (last - self.knots[k]);
        let d_last = d(kk - 2);
        for k in 0..kk - 2 {
            out[k + 1] = d(k) - d_last;
        }
    }

    pub fn eval(&self, x: T) -> Vec<T> {
        let mut out = vec![T::zero(); self.df()];
        self.eval_into(x, &mut out);
        out
    }
}

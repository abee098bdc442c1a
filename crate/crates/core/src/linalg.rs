//! Dense matrices and the pivoted Cholesky factorization behind every
//! weighted least-squares solve in the crate.

use crate::scalar::Real;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    nrows: usize,
    ncols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            data: vec![T::zero(); nrows * ncols],
        }
    }

    pub fn from_row_major(nrows: usize, ncols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), nrows * ncols, "matrix data length");
        Self { nrows, ncols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(nrows * ncols);
        for r in rows {
            assert_eq!(r.len(), ncols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self { nrows, ncols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.ncols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.nrows).map(|i| self[(i, j)]).collect()
    }

    /// Rows selected by index, in the given order (indices may repeat).
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.ncols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            nrows: idx.len(),
            ncols: self.ncols,
            data,
        }
    }

    /// Stacks matrices with equal column counts.
    pub fn vstack(parts: &[Matrix<T>]) -> Self {
        let ncols = parts.first().map_or(0, |m| m.ncols);
        let mut data = Vec::new();
        let mut nrows = 0;
        for p in parts {
            assert_eq!(p.ncols, ncols, "vstack column mismatch");
            data.extend_from_slice(&p.data);
            nrows += p.nrows;
        }
        Self { nrows, ncols, data }
    }

    /// `self * v`.
    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.ncols);
        (0..self.nrows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `selfᵀ diag(w) v`.
    pub fn weighted_tmul_vec(&self, w: &[T], v: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.ncols];
        for i in 0..self.nrows {
            let s = w[i] * v[i];
            if s == T::zero() {
                continue;
            }
            for (o, &x) in out.iter_mut().zip(self.row(i)) {
                *o += x * s;
            }
        }
        out
    }

    /// `selfᵀ diag(w) self`, symmetric.
    pub fn weighted_gram(&self, w: &[T]) -> Matrix<T> {
        let p = self.ncols;
        let mut g = Matrix::zeros(p, p);
        for i in 0..self.nrows {
            let wi = w[i];
            if wi == T::zero() {
                continue;
            }
            let r = self.row(i);
            for a in 0..p {
                let ra = r[a] * wi;
                if ra == T::zero() {
                    continue;
                }
                let grow = &mut g.data[a * p..a * p + p];
                for b in a..p {
                    grow[b] += ra * r[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                g.data[a * p + b] = g.data[b * p + a];
            }
        }
        g
    }

    pub fn transpose(&self) -> Matrix<T> {
        let mut t = Matrix::zeros(self.ncols, self.nrows);
        for i in 0..self.nrows {
            for j in 0..self.ncols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.ncols, other.nrows);
        let mut out = Matrix::zeros(self.nrows, other.ncols);
        for i in 0..self.nrows {
            for k in 0..self.ncols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.ncols {
                    out.data[i * other.ncols + j] += a * other.data[k * other.ncols + j];
                }
            }
        }
        out
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.ncols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.ncols + j]
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Relative pivot tolerance for rank detection.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Symmetric positive semi-definite factorization `P A Pᵀ = L Lᵀ` with
/// diagonal pivoting. Pivots below `RANK_TOLERANCE × largest pivot` stop the
/// factorization and the rank is reported.
#[derive(Debug, Clone)]
pub struct PivotedCholesky<T> {
    n: usize,
    /// Lower triangle, row-major, in permuted order.
    l: Vec<T>,
    perm: Vec<usize>,
    rank: usize,
}

impl<T: Real> PivotedCholesky<T> {
    pub fn new(a: &Matrix<T>) -> Self {
        Self::with_tolerance(a, RANK_TOLERANCE)
    }

    /// Factorization with a custom relative pivot tolerance; `0` only stops
    /// at non-positive pivots.
    pub fn with_tolerance(a: &Matrix<T>, rel_tol: f64) -> Self {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "square matrix required");
        let mut w = a.as_slice().to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rank = n;
        let mut max_pivot = T::zero();
        let tol = T::lit(rel_tol);
        for j in 0..n {
            // Remaining diagonal after eliminating the first j columns.
            let mut q = j;
            let mut best = T::neg_infinity();
            for i in j..n {
                let mut d = w[i * n + i];
                for s in 0..j {
                    d -= w[i * n + s] * w[i * n + s];
                }
                if d > best {
                    best = d;
                    q = i;
                }
            }
            if j == 0 {
                max_pivot = best;
            }
            if !(best > tol * max_pivot) || !(best > T::zero()) {
                rank = j;
                break;
            }
            if q != j {
                swap_sym(&mut w, n, j, q);
                perm.swap(j, q);
            }
            let mut djj = w[j * n + j];
            for s in 0..j {
                djj -= w[j * n + s] * w[j * n + s];
            }
            let ljj = djj.sqrt();
            w[j * n + j] = ljj;
            for i in j + 1..n {
                let mut v = w[i * n + j];
                for s in 0..j {
                    v -= w[i * n + s] * w[j * n + s];
                }
                w[i * n + j] = v / ljj;
            }
        }
        Self {
            n,
            l: w,
            perm,
            rank,
        }
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.n
    }

    /// Solves `A x = b`. Requires full rank.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        assert!(self.is_full_rank(), "solve on rank-deficient factor");
        let n = self.n;
        let mut y: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut v = y[i];
            for s in 0..i {
                v -= self.l[i * n + s] * y[s];
            }
            y[i] = v / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut v = y[i];
            for s in i + 1..n {
                v -= self.l[s * n + i] * y[s];
            }
            y[i] = v / self.l[i * n + i];
        }
        let mut x = vec![T::zero(); n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        x
    }

    /// Explicit inverse (small matrices only; used for sandwich variances).
    pub fn inverse(&self) -> Matrix<T> {
        let n = self.n;
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = T::zero());
            e[j] = T::one();
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }
}

fn swap_sym<T: Copy>(w: &mut [T], n: usize, a: usize, b: usize) {
    for k in 0..n {
        w.swap(a * n + k, b * n + k);
    }
    for k in 0..n {
        w.swap(k * n + a, k * n + b);
    }
}

/// Dense Gaussian elimination with partial pivoting. Kept separate from the
/// Cholesky path so tests can use it as an independent reference solver.
pub fn solve_dense<T: Real>(a: &Matrix<T>, b: &[T]) -> Option<Vec<T>> {
    let n = a.nrows();
    let mut m = a.as_slice().to_vec();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if m[r * n + col].abs() > m[piv * n + col].abs() {
                piv = r;
            }
        }
        if m[piv * n + col] == T::zero() {
            return None;
        }
        if piv != col {
            for k in 0..n {
                m.swap(col * n + k, piv * n + k);
            }
            rhs.swap(col, piv);
        }
        let d = m[col * n + col];
        for r in col + 1..n {
            let f = m[r * n + col] / d;
            if f == T::zero() {
                continue;
            }
            for k in col..n {
                let v = m[col * n + k];
                m[r * n + k] -= f * v;
            }
            let v = rhs[col];
            rhs[r] -= f * v;
        }
    }
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let mut v = rhs[i];
        for k in i + 1..n {
            v -= m[i * n + k] * x[k];
        }
        x[i] = v / m[i * n + i];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_spd() {
        let a = Matrix::<f64>::from_rows(&[
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, 0.2],
            vec![0.5, 0.2, 2.0],
        ]);
        let b = vec![1.0, 2.0, 3.0];
        let x = PivotedCholesky::new(&a).solve(&b);
        let r = a.mul_vec(&x);
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-14);
        }
        let y = solve_dense(&a, &b).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            assert!((xi - yi).abs() < 1e-14);
        }
    }

    #[test]
    fn detects_rank_deficiency() {
        // Third column = first + second.
        let x = Matrix::<f64>::from_rows(&[
            vec![1.0, 0.0, 1.0],
            vec![1.0, 1.0, 2.0],
            vec![1.0, 2.0, 3.0],
            vec![1.0, 5.0, 6.0],
        ]);
        let g = x.weighted_gram(&[1.0; 4]);
        let f = PivotedCholesky::new(&g);
        assert_eq!(f.rank(), 2);
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let a = Matrix::<f64>::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]);
        let inv = PivotedCholesky::new(&a).inverse();
        let id = a.matmul(&inv);
        for i in 0..2 {
            for j in 0..2 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((id[(i, j)] - e).abs() < 1e-14);
            }
        }
    }
}

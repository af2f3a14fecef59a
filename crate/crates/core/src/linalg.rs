//! Small dense matrices, a symmetric tridiagonal eigenvalue solver, and an
//! envelope Cholesky factorization used by the Newton solver.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n_cols), "ragged rows");
        Self {
            rows: n_rows,
            cols: n_cols,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn max_asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }
}

impl<T> std::ops::Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for DenseMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Eigenvalues of the symmetric tridiagonal matrix with diagonal `diag` and
/// off-diagonal `off` (`off.len() == diag.len() - 1`), ascending.
///
/// Implicit QL with Wilkinson shifts.
pub fn symmetric_tridiagonal_eigenvalues<T: Real>(diag: &[T], off: &[T]) -> Result<Vec<T>> {
    let n = diag.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    if off.len() + 1 != n {
        return Err(Error::Dimension(format!(
            "tridiagonal: {} diagonal entries but {} off-diagonal",
            n,
            off.len()
        )));
    }
    let mut d = diag.to_vec();
    let mut e = off.to_vec();
    e.push(T::zero());

    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= T::epsilon() * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::InternalConsistency(
                    "tridiagonal QL iteration did not converge".into(),
                ));
            }
            let mut g = (d[l + 1] - d[l]) / (T::two() * e[l]);
            let mut r = g.hypot(T::one());
            let signed_r = if g >= T::zero() { r } else { -r };
            g = d[m] - d[l] + e[l] / (g + signed_r);
            let (mut s, mut c, mut p) = (T::one(), T::one(), T::zero());
            let mut underflow = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == T::zero() {
                    d[i + 1] -= p;
                    e[m] = T::zero();
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + T::two() * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = T::zero();
        }
    }
    d.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    Ok(d)
}

/// Cholesky factorization over the envelope (profile) of a symmetric matrix.
///
/// Entries are addressed in a permuted ordering chosen by the caller so that
/// the envelope stays narrow.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky<T> {
    n: usize,
    /// `perm[new] = old`.
    perm: Vec<usize>,
    /// First column of the envelope for each permuted row.
    first: Vec<usize>,
    /// Offset of each permuted row inside `matrix`.
    offset: Vec<usize>,
    /// Lower triangle of the matrix inside the envelope (permuted ordering).
    matrix: Vec<T>,
    /// Factor storage, same layout as `matrix`.
    factor: Vec<T>,
    factored: bool,
}

impl<T: Real> EnvelopeCholesky<T> {
    /// Builds the envelope of the symmetric matrix given as `(row, col, value)`
    /// triplets in the original ordering. Duplicate entries are summed; both
    /// triangles may be supplied, only the lower triangle (after permutation) is read.
    pub fn new(n: usize, triplets: impl IntoIterator<Item = (usize, usize, T)> + Clone, perm: Vec<usize>) -> Result<Self> {
        if perm.len() != n {
            return Err(Error::Dimension(format!(
                "permutation length {} for matrix of size {n}",
                perm.len()
            )));
        }
        let mut inverse = vec![usize::MAX; n];
        for (new, &old) in perm.iter().enumerate() {
            if old >= n || inverse[old] != usize::MAX {
                return Err(Error::Dimension("invalid permutation".into()));
            }
            inverse[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (r, c, _) in triplets.clone() {
            let (i, j) = (inverse[r], inverse[c]);
            let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
            first[hi] = first[hi].min(lo);
        }
        let mut offset = Vec::with_capacity(n + 1);
        let mut total = 0;
        for (i, &f) in first.iter().enumerate() {
            offset.push(total);
            total += i - f + 1;
        }
        offset.push(total);
        let mut matrix = vec![T::zero(); total];
        for (r, c, v) in triplets {
            let (i, j) = (inverse[r], inverse[c]);
            if i >= j {
                matrix[offset[i] + j - first[i]] += v;
            }
        }
        Ok(Self {
            n,
            perm,
            first,
            offset,
            factor: vec![T::zero(); total],
            matrix,
            factored: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored lower-triangle entries.
    pub fn envelope_size(&self) -> usize {
        self.matrix.len()
    }

    /// Largest row bandwidth `i - first[i]` in the permuted ordering.
    pub fn bandwidth(&self) -> usize {
        (0..self.n).map(|i| i - self.first[i]).max().unwrap_or(0)
    }

    #[inline]
    fn at(&self, buf: &[T], i: usize, j: usize) -> T {
        buf[self.offset[i] + j - self.first[i]]
    }

    /// Factors `A + shift·I`. Returns `false` if the shifted matrix is not
    /// numerically positive definite.
    pub fn factor(&mut self, shift: T) -> bool {
        self.factored = false;
        for i in 0..self.n {
            let fi = self.first[i];
            for j in fi..=i {
                let fj = self.first[j];
                let start = fi.max(fj);
                let mut sum = self.at(&self.matrix, i, j);
                if i == j {
                    sum += shift;
                }
                let row_i = self.offset[i] - fi;
                let row_j = self.offset[j] - fj;
                for k in start..j {
                    sum -= self.factor[row_i + k] * self.factor[row_j + k];
                }
                if i == j {
                    if !(sum > T::zero()) || !sum.is_finite() {
                        return false;
                    }
                    self.factor[row_i + i] = sum.sqrt();
                } else {
                    self.factor[row_i + j] = sum / self.factor[row_j + j];
                }
            }
        }
        self.factored = true;
        true
    }

    /// Solves `(A + shift·I) x = rhs` with the last successful factorization.
    pub fn solve(&self, rhs: &[T]) -> Result<Vec<T>> {
        if !self.factored {
            return Err(Error::InternalConsistency(
                "solve called without a successful factorization".into(),
            ));
        }
        if rhs.len() != self.n {
            return Err(Error::Dimension(format!(
                "rhs length {} for system of size {}",
                rhs.len(),
                self.n
            )));
        }
        let mut y: Vec<T> = self.perm.iter().map(|&old| rhs[old]).collect();
        // L y = b
        for i in 0..self.n {
            let fi = self.first[i];
            let row = self.offset[i] - fi;
            let mut sum = y[i];
            for k in fi..i {
                sum -= self.factor[row + k] * y[k];
            }
            y[i] = sum / self.factor[row + i];
        }
        // Lᵀ x = y
        for i in (0..self.n).rev() {
            let fi = self.first[i];
            let row = self.offset[i] - fi;
            y[i] /= self.factor[row + i];
            let yi = y[i];
            for k in fi..i {
                y[k] -= self.factor[row + k] * yi;
            }
        }
        let mut x = vec![T::zero(); self.n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        Ok(x)
    }
}

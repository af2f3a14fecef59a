//! Compressed sparse row operators assembled from coordinate triplets.

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::scalar::Real;

/// Sparse matrix in CSR layout. Built from triplets; duplicates are summed in
/// insertion order and exact zeros are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator<T> {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> SparseOperator<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, T)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|&&(r, c, _)| r >= rows || c >= cols) {
            return Err(Error::Dimension(format!(
                "triplet ({r}, {c}) out of range for {rows}x{cols} operator"
            )));
        }
        // Stable sort keeps the summation order of duplicates deterministic.
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("entry present") += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut op = Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        };
        op.drop_zeros();
        Ok(op)
    }

    fn drop_zeros(&mut self) {
        if self.values.iter().all(|&v| v != T::zero()) {
            return;
        }
        let mut row_ptr = vec![0; self.rows + 1];
        let mut col_idx = Vec::with_capacity(self.col_idx.len());
        let mut values = Vec::with_capacity(self.values.len());
        for r in 0..self.rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.values[k] != T::zero() {
                    col_idx.push(self.col_idx[k]);
                    values.push(self.values[k]);
                }
            }
            row_ptr[r + 1] = col_idx.len();
        }
        self.row_ptr = row_ptr;
        self.col_idx = col_idx;
        self.values = values;
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(columns, values)` of row `r`.
    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[T]) {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[range.clone()], &self.values[range])
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, T)> + Clone + '_ {
        (0..self.rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map_or(T::zero(), |k| vals[k])
    }

    /// `y = A x`.
    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.cols {
            return Err(Error::Dimension(format!(
                "operator has {} columns, vector has {} entries",
                self.cols,
                x.len()
            )));
        }
        Ok((0..self.rows)
            .map(|r| {
                let (cols, vals) = self.row(r);
                cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum()
            })
            .collect())
    }

    /// `x = Aᵀ y`.
    pub fn apply_transpose(&self, y: &[T]) -> Result<Vec<T>> {
        if y.len() != self.rows {
            return Err(Error::Dimension(format!(
                "operator has {} rows, vector has {} entries",
                self.rows,
                y.len()
            )));
        }
        let mut x = vec![T::zero(); self.cols];
        for (r, &yr) in y.iter().enumerate() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                x[c] += v * yr;
            }
        }
        Ok(x)
    }

    /// `xᵀ A x` for square operators.
    pub fn quadratic_form(&self, x: &[T]) -> Result<T> {
        let ax = self.apply(x)?;
        Ok(ax.iter().zip(x).map(|(&a, &b)| a * b).sum())
    }

    /// `Aᵀ diag(w) A`, with one weight per row.
    pub fn weighted_gram(&self, row_weights: &[T]) -> Result<Self> {
        if row_weights.len() != self.rows {
            return Err(Error::Dimension(format!(
                "{} row weights for {} rows",
                row_weights.len(),
                self.rows
            )));
        }
        let mut triplets = Vec::new();
        for (r, &w) in row_weights.iter().enumerate() {
            let (cols, vals) = self.row(r);
            for (&ci, &vi) in cols.iter().zip(vals) {
                for (&cj, &vj) in cols.iter().zip(vals) {
                    triplets.push((ci, cj, w * (vi * vj)));
                }
            }
        }
        Self::from_triplets(self.cols, self.cols, triplets)
    }

    /// Elementwise `self + scale · other`.
    pub fn add_scaled(&self, other: &Self, scale: T) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension("operator shapes differ".into()));
        }
        let triplets = self
            .triplets()
            .chain(other.triplets().map(|(r, c, v)| (r, c, scale * v)))
            .collect();
        Self::from_triplets(self.rows, self.cols, triplets)
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut m = DenseMatrix::zeros(self.rows, self.cols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] = v;
        }
        m
    }

    /// Largest `|A_ij − A_ji|`.
    pub fn max_asymmetry(&self) -> T {
        self.triplets()
            .map(|(r, c, v)| (v - self.get(c, r)).abs())
            .fold(T::zero(), T::max)
    }

    /// Largest `|i − j|` over stored entries, after relabelling indices by `position`.
    pub fn bandwidth_under(&self, position: &[usize]) -> usize {
        self.triplets()
            .map(|(r, c, _)| position[r].abs_diff(position[c]))
            .max()
            .unwrap_or(0)
    }
}

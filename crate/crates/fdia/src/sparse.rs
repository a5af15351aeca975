//! Minimal compressed-sparse-row matrices for the graph operators used here.
//!
//! Only what the pipeline needs: construction from triplets, matrix-vector
//! products, and row iteration. Entries within a row are kept sorted by
//! column and duplicates are summed at build time.

use num_complex::Complex64;
use std::ops::{Add, Mul};

/// CSR matrix over a scalar that supports addition and multiplication.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr<T> {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<T>,
}

pub type CsrReal = Csr<f64>;
pub type CsrComplex = Csr<Complex64>;

impl<T> Csr<T>
where
    T: Copy + Default + PartialEq + Add<Output = T> + Mul<Output = T>,
{
    /// Build from (row, col, value) triplets; duplicates accumulate, exact
    /// zeros after accumulation are dropped.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, T)>,
    ) -> Self {
        let mut rows: Vec<Vec<(usize, T)>> = vec![Vec::new(); nrows];
        for (r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet out of bounds");
            rows[r].push((c, v));
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in &mut rows {
            row.sort_by_key(|&(c, _)| c);
            let mut i = 0;
            while i < row.len() {
                let c = row[i].0;
                let mut acc = row[i].1;
                let mut j = i + 1;
                while j < row.len() && row[j].0 == c {
                    acc = acc + row[j].1;
                    j += 1;
                }
                if acc != T::default() {
                    col_idx.push(c);
                    values.push(acc);
                }
                i = j;
            }
            row_ptr.push(col_idx.len());
        }
        Csr {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entries of row `r` as (col, value) pairs, sorted by column.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        self.col_idx[lo..hi]
            .iter()
            .zip(&self.values[lo..hi])
            .map(|(&c, &v)| (c, v))
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        match self.col_idx[lo..hi].binary_search(&c) {
            Ok(k) => self.values[lo + k],
            Err(_) => T::default(),
        }
    }

    /// y = A x.
    pub fn matvec(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.ncols, "matvec dimension mismatch");
        assert_eq!(y.len(), self.nrows, "matvec dimension mismatch");
        for r in 0..self.nrows {
            let mut acc = T::default();
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc = acc + self.values[k] * x[self.col_idx[k]];
            }
            y[r] = acc;
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut dense = vec![vec![T::default(); self.ncols]; self.nrows];
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                dense[r][c] = v;
            }
        }
        dense
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_accumulate_and_sort() {
        let m = CsrReal::from_triplets(2, 2, vec![(0, 1, 2.0), (0, 1, 3.0), (1, 0, 1.0)]);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(0, 1), 5.0);
        assert_eq!(m.get(1, 0), 1.0);
        assert_eq!(m.get(0, 0), 0.0);
    }

    #[test]
    fn zero_after_accumulation_is_dropped() {
        let m = CsrReal::from_triplets(1, 1, vec![(0, 0, 1.0), (0, 0, -1.0)]);
        assert_eq!(m.nnz(), 0);
    }

    #[test]
    fn matvec_matches_dense() {
        let m = CsrReal::from_triplets(
            3,
            3,
            vec![(0, 0, 2.0), (0, 2, -1.0), (1, 1, 3.0), (2, 0, 4.0)],
        );
        let x = [1.0, 2.0, 3.0];
        let mut y = [0.0; 3];
        m.matvec(&x, &mut y);
        assert_eq!(y, [-1.0, 6.0, 4.0]);
    }
}

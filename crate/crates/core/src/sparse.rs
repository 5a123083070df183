//! Compressed sparse row matrices and their products with dense tables.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Matrix;

/// CSR matrix with column indices sorted ascending within each row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets. Triplets must be distinct in
    /// `(row, col)`; they are sorted here.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(u32, u32, f64)]) -> Self {
        let mut sorted: Vec<(u32, u32, f64)> = triplets.to_vec();
        sorted.sort_by_key(|t| (t.0, t.1));
        let mut indptr = vec![0usize; n_rows + 1];
        for &(r, c, _) in &sorted {
            assert!((r as usize) < n_rows && (c as usize) < n_cols, "triplet out of range");
            indptr[r as usize + 1] += 1;
        }
        for r in 0..n_rows {
            indptr[r + 1] += indptr[r];
        }
        debug_assert!(sorted.windows(2).all(|w| (w[0].0, w[0].1) != (w[1].0, w[1].1)));
        Self {
            n_rows,
            n_cols,
            indptr,
            indices: sorted.iter().map(|t| t.1).collect(),
            values: sorted.iter().map(|t| t.2).collect(),
        }
    }

    /// Same sparsity pattern, new values (in storage order).
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len());
        Self {
            values,
            ..self.clone()
        }
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    #[inline]
    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of one row.
    #[inline]
    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let (s, e) = (self.indptr[r], self.indptr[r + 1]);
        (&self.indices[s..e], &self.values[s..e])
    }

    #[inline]
    pub fn row_nnz(&self, r: usize) -> usize {
        self.indptr[r + 1] - self.indptr[r]
    }

    pub fn contains(&self, r: usize, c: u32) -> bool {
        self.row(r).0.binary_search(&c).is_ok()
    }

    pub fn get(&self, r: usize, c: u32) -> Option<f64> {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).ok().map(|k| vals[k])
    }

    /// Iterates `(row, col, value)` in storage order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, u32, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    /// `self * x` for a dense `n_cols × d` table.
    pub fn mul_dense(&self, x: &Matrix) -> Matrix {
        assert_eq!(x.rows(), self.n_cols);
        let d = x.cols();
        let mut out = Matrix::zeros(self.n_rows, d);
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            let out_row = out.row_mut(r);
            for (&c, &v) in cols.iter().zip(vals) {
                for (o, &b) in out_row.iter_mut().zip(x.row(c as usize)) {
                    *o += v * b;
                }
            }
        }
        out
    }

    /// `selfᵀ * x` for a dense `n_rows × d` table, by row scatter.
    pub fn t_mul_dense(&self, x: &Matrix) -> Matrix {
        assert_eq!(x.rows(), self.n_rows);
        let d = x.cols();
        let mut out = Matrix::zeros(self.n_cols, d);
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            let x_row = x.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                for (o, &b) in out.row_mut(c as usize).iter_mut().zip(x_row) {
                    *o += v * b;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n_rows, self.n_cols);
        for (r, c, v) in self.iter() {
            m.set(r, c as usize, v);
        }
        m
    }

    /// Keeps the entries for which `keep` returns a (possibly rescaled) value.
    pub fn filter(&self, mut keep: impl FnMut(usize, u32, f64) -> Option<f64>) -> Self {
        let mut indptr = Vec::with_capacity(self.n_rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                if let Some(nv) = keep(r, c, v) {
                    indices.push(c);
                    values.push(nv);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            indptr,
            indices,
            values,
        }
    }
}

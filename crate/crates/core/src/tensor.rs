//! Dense and compressed-sparse binary32 matrices.
//!
//! All reductions run in a fixed order (ascending inner index, accumulator
//! starting at `+0.0`), so a fault-free forward pass is bit-reproducible.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Row-major dense `rows × cols` matrix of `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::new",
                format!("{} values for {rows}x{cols}", rows * cols),
                data.len(),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[&[f32]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape("Matrix::from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        self.data[i * self.cols + j] = v;
    }

    pub fn map_inplace(&mut self, f: impl Fn(f32) -> f32) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }

    /// `self · rhs` with dense IEEE semantics.
    ///
    /// Zero entries of `self` are skipped in the inner loop, which keeps the
    /// product cheap for sparse bag-of-words features. A skipped `0 · w` term
    /// cannot change a finite accumulator, but `0 · ±inf` and `0 · NaN` are
    /// NaN, so non-finite entries of `rhs` are patched in afterwards. The
    /// result is bit-identical to the plain triple loop.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::shape(
                "matmul",
                format!("lhs cols == rhs rows ({})", self.cols),
                rhs.rows,
            ));
        }
        let (n, inner, m) = (self.rows, self.cols, rhs.cols);
        let mut out = Matrix::zeros(n, m);
        for i in 0..n {
            let a = &self.data[i * inner..(i + 1) * inner];
            let acc = &mut out.data[i * m..(i + 1) * m];
            for (k, &x) in a.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let b = &rhs.data[k * m..(k + 1) * m];
                for (o, &w) in acc.iter_mut().zip(b) {
                    *o += x * w;
                }
            }
        }
        let poisoned: Vec<(usize, usize)> = rhs
            .data
            .iter()
            .enumerate()
            .filter(|(_, w)| !w.is_finite())
            .map(|(idx, _)| (idx / m, idx % m))
            .collect();
        if !poisoned.is_empty() {
            for i in 0..n {
                for &(k, j) in &poisoned {
                    if self.data[i * inner + k] == 0.0 {
                        out.data[i * m + j] = f32::NAN;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Reference triple loop; kept for testing the fast kernel.
    pub fn matmul_naive(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::shape("matmul_naive", self.cols, rhs.rows));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for j in 0..rhs.cols {
                let mut acc = 0.0f32;
                for k in 0..self.cols {
                    acc += self.get(i, k) * rhs.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        Ok(out)
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn hconcat(parts: &[Matrix]) -> Result<Matrix> {
        let rows = parts.first().map_or(0, |p| p.rows);
        if parts.iter().any(|p| p.rows != rows) {
            return Err(Error::Structural("hconcat of mismatched row counts".into()));
        }
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for p in parts {
                out.row_mut(i)[off..off + p.cols].copy_from_slice(p.row(i));
                off += p.cols;
            }
        }
        Ok(out)
    }

    /// Element-wise bit equality, treating every NaN payload as distinct.
    pub fn bit_eq(&self, other: &Matrix) -> bool {
        self.shape() == other.shape()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Square sparse matrix in compressed sparse row form with `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f32>,
}

impl SparseMatrix {
    pub fn new(
        n: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f32>,
    ) -> Result<Self> {
        if row_ptr.len() != n + 1 || row_ptr[n] != col_idx.len() || col_idx.len() != values.len()
        {
            return Err(Error::Structural(format!(
                "inconsistent CSR arrays: n={n}, row_ptr={}, col_idx={}, values={}",
                row_ptr.len(),
                col_idx.len(),
                values.len()
            )));
        }
        if row_ptr.windows(2).any(|w| w[0] > w[1]) || col_idx.iter().any(|&c| c >= n) {
            return Err(Error::Structural("CSR offsets or indices out of range".into()));
        }
        Ok(SparseMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Column indices and values of row `i`, ascending by column.
    pub fn row(&self, i: usize) -> (&[usize], &[f32]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    /// Entry `(i, j)`, zero when not stored.
    pub fn get(&self, i: usize, j: usize) -> f32 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |p| vals[p])
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                m.set(i, j, v);
            }
        }
        m
    }

    /// `self · h`, summing each row's stored entries in ascending column order.
    pub fn spmm(&self, h: &Matrix) -> Result<Matrix> {
        if h.rows() != self.n {
            return Err(Error::shape("spmm", self.n, h.rows()));
        }
        let m = h.cols();
        let mut out = Matrix::zeros(self.n, m);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let acc = out.row_mut(i);
            for (&j, &a) in cols.iter().zip(vals) {
                for (o, &x) in acc.iter_mut().zip(h.row(j)) {
                    *o += a * x;
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
        let value = prop_oneof![
            4 => Just(0.0f32),
            4 => -4.0f32..4.0,
            1 => Just(f32::INFINITY),
            1 => Just(f32::NEG_INFINITY),
            1 => Just(f32::NAN),
            1 => Just(-0.0f32),
        ];
        proptest::collection::vec(value, rows * cols)
            .prop_map(move |d| Matrix::new(rows, cols, d).unwrap())
    }

    proptest! {
        #[test]
        fn skipping_kernel_matches_naive(a in matrix(5, 7), b in matrix(7, 3)) {
            let fast = a.matmul(&b).unwrap();
            let slow = a.matmul_naive(&b).unwrap();
            for (x, y) in fast.data().iter().zip(slow.data()) {
                if y.is_nan() {
                    prop_assert!(x.is_nan());
                } else {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }

    #[test]
    fn zero_times_infinity_poisons_row() {
        let a = Matrix::from_rows(&[&[0.0, 1.0], &[2.0, 1.0]]).unwrap();
        let b = Matrix::from_rows(&[&[f32::INFINITY], &[1.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert!(c.get(0, 0).is_nan());
        assert_eq!(c.get(1, 0), f32::INFINITY);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        assert!(matches!(a.matmul(&b), Err(Error::Shape { .. })));
    }

    #[test]
    fn csr_validation() {
        assert!(SparseMatrix::new(2, vec![0, 1, 2], vec![1, 0], vec![1.0, 1.0]).is_ok());
        assert!(SparseMatrix::new(2, vec![0, 1], vec![1], vec![1.0]).is_err());
        assert!(SparseMatrix::new(2, vec![0, 1, 2], vec![1, 2], vec![1.0, 1.0]).is_err());
    }
}

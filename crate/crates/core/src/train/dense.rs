//! Double-precision dense and sparse kernels used only by training.

use alloc::vec;
use alloc::vec::Vec;

use crate::graph::Graph;
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Dense {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_f32(m: &Matrix) -> Self {
        Dense {
            rows: m.rows(),
            cols: m.cols(),
            data: m.data().iter().map(|&x| f64::from(x)).collect(),
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Dense { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `self · w`.
    pub fn matmul(&self, w: &Dense) -> Dense {
        debug_assert_eq!(self.cols, w.rows);
        let mut out = Dense::zeros(self.rows, w.cols);
        for i in 0..self.rows {
            let o = &mut out.data[i * w.cols..(i + 1) * w.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (x, &b) in o.iter_mut().zip(w.row(k)) {
                    *x += a * b;
                }
            }
        }
        out
    }

    /// `selfᵀ · g`.
    pub fn t_matmul(&self, g: &Dense) -> Dense {
        debug_assert_eq!(self.rows, g.rows);
        let mut out = Dense::zeros(self.cols, g.cols);
        for i in 0..self.rows {
            let gi = g.row(i);
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (x, &b) in out.row_mut(k).iter_mut().zip(gi) {
                    *x += a * b;
                }
            }
        }
        out
    }

    /// `self · wᵀ`.
    pub fn matmul_t(&self, w: &Dense) -> Dense {
        debug_assert_eq!(self.cols, w.cols);
        let mut out = Dense::zeros(self.rows, w.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            if a.iter().all(|&x| x == 0.0) {
                continue;
            }
            for j in 0..w.rows {
                out.data[i * w.rows + j] = dot(a, w.row(j));
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Dense) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&x| x as f32).collect()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Compressed sparse rows with double values.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub rows: usize,
    pub cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl Csr {
    /// Nonzero entries of a dense matrix.
    pub fn from_matrix(m: &Matrix) -> Self {
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for i in 0..m.rows() {
            for (j, &x) in m.row(i).iter().enumerate() {
                if x != 0.0 {
                    col_idx.push(j);
                    values.push(f64::from(x));
                }
            }
            row_ptr.push(col_idx.len());
        }
        Csr {
            rows: m.rows(),
            cols: m.cols(),
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    /// Same sparsity pattern with new values.
    pub fn with_values(&self, values: Vec<f64>) -> Csr {
        debug_assert_eq!(values.len(), self.values.len());
        Csr {
            values,
            ..self.clone()
        }
    }

    /// `self · b`.
    pub fn spmm(&self, b: &Dense) -> Dense {
        debug_assert_eq!(self.cols, b.rows);
        let mut out = Dense::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            let o = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (&j, &a) in cols.iter().zip(vals) {
                for (x, &y) in o.iter_mut().zip(b.row(j)) {
                    *x += a * y;
                }
            }
        }
        out
    }

    /// `selfᵀ · g`.
    pub fn t_spmm(&self, g: &Dense) -> Dense {
        debug_assert_eq!(self.rows, g.rows);
        let mut out = Dense::zeros(self.cols, g.cols);
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            let gi = g.row(i);
            if gi.iter().all(|&x| x == 0.0) {
                continue;
            }
            for (&j, &a) in cols.iter().zip(vals) {
                for (x, &y) in out.row_mut(j).iter_mut().zip(gi) {
                    *x += a * y;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Dense {
        let mut d = Dense::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                d.data[i * self.cols + j] = v;
            }
        }
        d
    }
}

fn inv_sqrt(d: usize) -> f64 {
    1.0 / libm::sqrt(d as f64)
}

/// `D^-1/2 (A + I) D^-1/2` in double precision.
pub fn adjacency(g: &Graph) -> Csr {
    let n = g.num_nodes();
    let s: Vec<f64> = (0..n).map(|v| inv_sqrt(g.degree(v) + 1)).collect();
    let mut row_ptr = vec![0];
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    for v in 0..n {
        let nb = g.neighbors(v);
        let split = nb.partition_point(|&u| u < v);
        for &u in nb[..split].iter().chain(core::iter::once(&v)).chain(&nb[split..]) {
            col_idx.push(u);
            values.push(s[v] * s[u]);
        }
        row_ptr.push(col_idx.len());
    }
    Csr {
        rows: n,
        cols: n,
        row_ptr,
        col_idx,
        values,
    }
}

/// `−D^-1/2 A D^-1/2` in double precision.
pub fn laplacian(g: &Graph) -> Csr {
    let n = g.num_nodes();
    let s: Vec<f64> = (0..n)
        .map(|v| if g.degree(v) == 0 { 0.0 } else { inv_sqrt(g.degree(v)) })
        .collect();
    let mut values = Vec::with_capacity(g.col_idx().len());
    for v in 0..n {
        for &u in g.neighbors(v) {
            values.push(-s[v] * s[u]);
        }
    }
    Csr {
        rows: n,
        cols: n,
        row_ptr: g.row_ptr().to_vec(),
        col_idx: g.col_idx().to_vec(),
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(rows: usize, cols: usize, seed: u64) -> Dense {
        let mut s = seed;
        let data = (0..rows * cols)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 33) as f64 / (1u64 << 31) as f64) - 0.5
            })
            .collect();
        Dense::from_vec(rows, cols, data)
    }

    fn naive(a: &Dense, b: &Dense) -> Dense {
        let mut out = Dense::zeros(a.rows, b.cols);
        for i in 0..a.rows {
            for j in 0..b.cols {
                out.data[i * b.cols + j] = (0..a.cols).map(|k| a.row(i)[k] * b.row(k)[j]).sum();
            }
        }
        out
    }

    fn transpose(a: &Dense) -> Dense {
        let mut t = Dense::zeros(a.cols, a.rows);
        for i in 0..a.rows {
            for j in 0..a.cols {
                t.data[j * a.rows + i] = a.row(i)[j];
            }
        }
        t
    }

    fn close(a: &Dense, b: &Dense) -> bool {
        a.rows == b.rows && a.cols == b.cols && a.data.iter().zip(&b.data).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn products_agree_with_naive() {
        let a = dense(5, 4, 1);
        let b = dense(4, 3, 2);
        let g = dense(5, 3, 3);
        assert!(close(&a.matmul(&b), &naive(&a, &b)));
        assert!(close(&a.t_matmul(&g), &naive(&transpose(&a), &g)));
        assert!(close(&g.matmul_t(&b), &naive(&g, &transpose(&b))));
    }

    #[test]
    fn sparse_products_agree_with_dense() {
        let g = Graph::from_edges(5, [(0, 1), (1, 2), (2, 3), (0, 4)]).unwrap();
        let b = dense(5, 3, 4);
        for m in [adjacency(&g), laplacian(&g)] {
            let d = m.to_dense();
            assert!(close(&m.spmm(&b), &naive(&d, &b)));
            assert!(close(&m.t_spmm(&b), &naive(&transpose(&d), &b)));
        }
    }

    #[test]
    fn double_operators_round_to_single_ones() {
        let g = Graph::from_edges(4, [(0, 1), (0, 2), (0, 3)]).unwrap();
        let a32 = crate::graph::normalize_adjacency(&g);
        let a64 = adjacency(&g);
        assert_eq!(a32.col_idx(), a64.col_idx.as_slice());
        for (&x, &y) in a32.values().iter().zip(&a64.values) {
            assert!((f64::from(x) - y).abs() < 1e-7);
        }
    }
}

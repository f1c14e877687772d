//! Dense row-major matrices and sparse matrices.
//!
//! Every dense value in the engine is a two-dimensional [`Tensor`]; vectors
//! are `1 x d` rows or `n x 1` columns. Sparse matrices are assembled from
//! `(row, col, weight)` triples and compressed to CSR for products.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor[{}x{}]", self.rows, self.cols)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("{} values cannot fill a {rows}x{cols} tensor", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    /// A `1 x n` row vector.
    pub fn row(values: &[f64]) -> Self {
        Self { rows: 1, cols: values.len(), data: values.to_vec() }
    }

    /// A `n x 1` column vector.
    pub fn column(values: &[f64]) -> Self {
        Self { rows: values.len(), cols: 1, data: values.to_vec() }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Shape("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn scalar(value: f64) -> Self {
        Self { rows: 1, cols: 1, data: vec![value] }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_slice_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Value of a `1 x 1` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert!(self.same_shape(other));
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Dense product `self * other`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!("matmul {}x{} by {}x{}", self.rows, self.cols, other.rows, other.cols)));
        }
        let mut out = Tensor::zeros(self.rows, other.cols);
        gemm(false, false, self, other, 1.0, 0.0, &mut out);
        Ok(out)
    }

    /// Gather a subset of rows into a new tensor.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row_slice(i));
        }
        Tensor { rows: idx.len(), cols: self.cols, data }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// `out = alpha * op(a) * op(b) + beta * out` where `op` optionally transposes.
pub(crate) fn gemm(ta: bool, tb: bool, a: &Tensor, b: &Tensor, alpha: f64, beta: f64, out: &mut Tensor) {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (kb, n) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, kb, "gemm inner dimension");
    assert_eq!((out.rows, out.cols), (m, n), "gemm output shape");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.scale_assign(beta);
        return;
    }
    let (rsa, csa) = if ta { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    // SAFETY: strides and extents describe the owned buffers exactly.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.data.as_mut_ptr(),
            out.cols as isize,
            1,
        );
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Sparse matrix held as deduplicated `(row, col, weight)` triples sorted
/// by row then column.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    /// Builds a matrix from triples. Duplicate coordinates keep the first
    /// weight seen.
    pub fn from_triples(rows: usize, cols: usize, mut triples: Vec<(usize, usize, f64)>) -> Result<Self> {
        for &(r, c, w) in &triples {
            if r >= rows || c >= cols {
                return Err(Error::Shape(format!("entry ({r}, {c}) outside {rows}x{cols}")));
            }
            if !w.is_finite() {
                return Err(Error::NonFinite(format!("sparse weight at ({r}, {c})")));
            }
        }
        // stable sort keeps first occurrence ahead of later duplicates
        triples.sort_by_key(|&(r, c, _)| (r, c));
        triples.dedup_by_key(|&mut (r, c, _)| (r, c));
        Ok(Self { rows, cols, entries: triples })
    }

    pub fn identity(n: usize) -> Self {
        Self { rows: n, cols: n, entries: (0..n).map(|i| (i, i, 1.0)).collect() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.rows, self.cols);
        for &(r, c, w) in &self.entries {
            t.set(r, c, w);
        }
        t
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut entries: Vec<_> = self.entries.iter().map(|&(r, c, w)| (c, r, w)).collect();
        entries.sort_by_key(|&(r, c, _)| (r, c));
        SparseMatrix { rows: self.cols, cols: self.rows, entries }
    }

    pub fn to_csr(&self) -> Csr {
        let mut indptr = vec![0usize; self.rows + 1];
        for &(r, _, _) in &self.entries {
            indptr[r + 1] += 1;
        }
        for i in 0..self.rows {
            indptr[i + 1] += indptr[i];
        }
        Csr {
            rows: self.rows,
            cols: self.cols,
            indptr,
            indices: self.entries.iter().map(|e| e.1).collect(),
            values: self.entries.iter().map(|e| e.2).collect(),
        }
    }

    /// Column indices present in row `r`.
    pub fn row_indices(&self, r: usize) -> Vec<usize> {
        let start = self.entries.partition_point(|e| e.0 < r);
        self.entries[start..].iter().take_while(|e| e.0 == r).map(|e| e.1).collect()
    }
}

/// Compressed sparse row storage used for products.
#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.indptr[r], self.indptr[r + 1]);
        self.indices[s..e].iter().copied().zip(self.values[s..e].iter().copied())
    }

    pub fn matmul_dense(&self, x: &Tensor) -> Result<Tensor> {
        if self.cols != x.rows() {
            return Err(Error::Shape(format!("sparse {}x{} by dense {}x{}", self.rows, self.cols, x.rows(), x.cols())));
        }
        let d = x.cols();
        let mut out = Tensor::zeros(self.rows, d);
        for r in 0..self.rows {
            let dst = &mut out.data[r * d..(r + 1) * d];
            for (c, w) in self.row(r) {
                let src = x.row_slice(c);
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        Ok(out)
    }
}

/// A sparse matrix packaged with its transpose, ready for forward products
/// and their adjoints.
#[derive(Clone, Debug)]
pub struct SparseOperator {
    forward: Csr,
    adjoint: Csr,
}

impl SparseOperator {
    pub fn new(m: &SparseMatrix) -> Arc<Self> {
        Arc::new(Self { forward: m.to_csr(), adjoint: m.transpose().to_csr() })
    }

    pub fn rows(&self) -> usize {
        self.forward.rows
    }

    pub fn cols(&self) -> usize {
        self.forward.cols
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.forward.matmul_dense(x)
    }

    pub fn apply_adjoint(&self, x: &Tensor) -> Result<Tensor> {
        self.adjoint.matmul_dense(x)
    }

    pub fn csr(&self) -> &Csr {
        &self.forward
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_identity_times_dense_is_dense() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let out = SparseOperator::new(&SparseMatrix::identity(3)).apply(&x).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn sparse_empty_row_gives_zero_row() {
        let a = SparseMatrix::from_triples(2, 2, vec![(0, 0, 1.0), (0, 1, 1.0)]).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let out = a.to_csr().matmul_dense(&x).unwrap();
        assert_eq!(out.row_slice(0), &[4.0, 6.0]);
        assert_eq!(out.row_slice(1), &[0.0, 0.0]);
        // dense oracle
        assert_eq!(a.to_dense().matmul(&x).unwrap(), out);
    }

    #[test]
    fn sparse_shape_mismatch() {
        let a = SparseMatrix::identity(3);
        assert!(a.to_csr().matmul_dense(&Tensor::zeros(2, 2)).is_err());
    }

    #[test]
    fn triples_are_deduplicated_and_validated() {
        let a = SparseMatrix::from_triples(2, 2, vec![(1, 1, 2.0), (0, 1, 1.0), (1, 1, 5.0)]).unwrap();
        assert_eq!(a.entries(), &[(0, 1, 1.0), (1, 1, 2.0)]);
        assert!(SparseMatrix::from_triples(2, 2, vec![(2, 0, 1.0)]).is_err());
        assert!(SparseMatrix::from_triples(2, 2, vec![(0, 0, f64::NAN)]).is_err());
    }

    #[test]
    fn gemm_transposes() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let mut out = Tensor::zeros(3, 2);
        gemm(true, false, &a, &b, 1.0, 0.0, &mut out);
        assert_eq!(out, a.transpose());
        let mut out = Tensor::zeros(2, 2);
        gemm(false, true, &a, &a, 1.0, 0.0, &mut out);
        assert_eq!(out.data(), &[14.0, 32.0, 32.0, 77.0]);
    }
}

//! Dense row-major and compressed sparse row matrices, with the handful of
//! products the encoder and its backward pass need.
//!
//! Every kernel writes each output row from exactly one task and accumulates
//! it in a fixed order, so results are bitwise identical whether rows are
//! processed sequentially or spread across the rayon pool.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Whether row-parallel kernels may use the rayon pool.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parallelism {
    #[default]
    Sequential,
    Rayon,
}

fn for_each_row<T, F>(out: &mut [T], width: usize, par: Parallelism, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    if width == 0 {
        return;
    }
    match par {
        Parallelism::Sequential => out.chunks_mut(width).enumerate().for_each(|(i, r)| f(i, r)),
        Parallelism::Rayon => out.par_chunks_mut(width).enumerate().for_each(|(i, r)| f(i, r)),
    }
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    // four interleaved partial sums, combined in a fixed order
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("DenseMatrix::from_vec", format!("{} values for {rows}x{cols}", rows * cols), data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape("DenseMatrix::from_rows", cols, format!("row {i} of length {}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
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

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> {
        // chunks(0) panics; a zero-width matrix still has `rows` empty rows.
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Gathers the listed rows into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: idx.len(), cols: self.cols, data }
    }

    /// `self · rhs`.
    pub fn matmul(&self, rhs: &Self, par: Parallelism) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::shape("matmul", format!("lhs cols {}", self.cols), format!("rhs rows {}", rhs.rows)));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for_each_row(&mut out.data, rhs.cols, par, |i, orow| {
            for (k, &a) in self.row(i).iter().enumerate() {
                if a != T::zero() {
                    axpy(a, rhs.row(k), orow);
                }
            }
        });
        Ok(out)
    }

    /// `self · rhsᵀ`.
    pub fn matmul_t(&self, rhs: &Self, par: Parallelism) -> Result<Self> {
        if self.cols != rhs.cols {
            return Err(Error::shape("matmul_t", format!("lhs cols {}", self.cols), format!("rhs cols {}", rhs.cols)));
        }
        let mut out = Self::zeros(self.rows, rhs.rows);
        for_each_row(&mut out.data, rhs.rows, par, |i, orow| {
            let a = self.row(i);
            for (j, o) in orow.iter_mut().enumerate() {
                *o = dot(a, rhs.row(j));
            }
        });
        Ok(out)
    }

    /// `selfᵀ · rhs`.
    pub fn t_matmul(&self, rhs: &Self, par: Parallelism) -> Result<Self> {
        if self.rows != rhs.rows {
            return Err(Error::shape("t_matmul", format!("lhs rows {}", self.rows), format!("rhs rows {}", rhs.rows)));
        }
        // both operands transposed so every dot product streams contiguously
        self.transpose().matmul_t(&rhs.transpose(), par)
    }

    pub fn to_f64(&self) -> DenseMatrix<f64> {
        DenseMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v.as_f64()).collect() }
    }

    pub fn from_f64(m: &DenseMatrix<f64>) -> Self {
        DenseMatrix { rows: m.rows, cols: m.cols, data: m.data.iter().map(|&v| T::of(v)).collect() }
    }
}

/// Compressed sparse row matrix with `u32` column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    /// Builds a matrix from raw parts, checking the layout: offsets are
    /// nondecreasing, column indices are in range and strictly increasing per row.
    pub fn from_parts(rows: usize, cols: usize, indptr: Vec<usize>, indices: Vec<u32>, values: Vec<T>) -> Result<Self> {
        if indptr.len() != rows + 1 || indptr[0] != 0 || indptr[rows] != indices.len() || indices.len() != values.len() {
            return Err(Error::Format("inconsistent CSR offsets".into()));
        }
        for i in 0..rows {
            if indptr[i] > indptr[i + 1] {
                return Err(Error::Format(format!("CSR offsets decrease at row {i}")));
            }
            let row = &indices[indptr[i]..indptr[i + 1]];
            if row.windows(2).any(|w| w[0] >= w[1]) || row.last().is_some_and(|&c| c as usize >= cols) {
                return Err(Error::Format(format!("CSR row {i} has unsorted or out-of-range columns")));
            }
        }
        Ok(Self { rows, cols, indptr, indices, values })
    }

    pub fn identity(n: usize) -> Self {
        Self { rows: n, cols: n, indptr: (0..=n).collect(), indices: (0..n as u32).collect(), values: vec![T::one(); n] }
    }

    pub fn from_dense(m: &DenseMatrix<T>) -> Self {
        let mut indptr = Vec::with_capacity(m.rows() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in m.iter_rows() {
            for (j, &v) in row.iter().enumerate() {
                if v != T::zero() {
                    indices.push(j as u32);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self { rows: m.rows(), cols: m.cols(), indptr, indices, values }
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                out.set(i, j as usize, v);
            }
        }
        out
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

    #[inline]
    pub fn row(&self, i: usize) -> impl Iterator<Item = (u32, T)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn row_indices(&self, i: usize) -> &[u32] {
        &self.indices[self.indptr[i]..self.indptr[i + 1]]
    }

    pub fn row_values(&self, i: usize) -> &[T] {
        &self.values[self.indptr[i]..self.indptr[i + 1]]
    }

    /// Entry (i, j), zero when not stored.
    pub fn get(&self, i: usize, j: usize) -> T {
        let idx = self.row_indices(i);
        match idx.binary_search(&(j as u32)) {
            Ok(p) => self.values[self.indptr[i] + p],
            Err(_) => T::zero(),
        }
    }

    pub fn row_sum(&self, i: usize) -> T {
        self.row_values(i).iter().copied().sum()
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.indices {
            counts[c as usize + 1] += 1;
        }
        for j in 0..self.cols {
            counts[j + 1] += counts[j];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0u32; self.nnz()];
        let mut values = vec![T::zero(); self.nnz()];
        // Rows are visited in increasing order, so each transposed row stays sorted.
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                let slot = next[j as usize];
                indices[slot] = i as u32;
                values[slot] = v;
                next[j as usize] += 1;
            }
        }
        Self { rows: self.cols, cols: self.rows, indptr, indices, values }
    }

    /// Sparse–dense product `self · dense`.
    pub fn spmm(&self, dense: &DenseMatrix<T>, par: Parallelism) -> Result<DenseMatrix<T>> {
        self.spmm_active(dense, None, par)
    }

    /// Like [`spmm`](Self::spmm), but rows of `dense` flagged inactive are
    /// treated as zero and skipped. Used when the right-hand side is known to be
    /// row-sparse, as gradients restricted to a batch are.
    pub fn spmm_active(&self, dense: &DenseMatrix<T>, active: Option<&[bool]>, par: Parallelism) -> Result<DenseMatrix<T>> {
        if self.cols != dense.rows() {
            return Err(Error::shape("spmm", format!("{} dense rows", self.cols), dense.rows()));
        }
        if let Some(a) = active {
            if a.len() != dense.rows() {
                return Err(Error::shape("spmm active mask", dense.rows(), a.len()));
            }
        }
        let mut out = DenseMatrix::zeros(self.rows, dense.cols());
        let width = dense.cols();
        for_each_row(out.as_mut_slice(), width, par, |i, orow| {
            for (j, v) in self.row(i) {
                if active.is_none_or(|a| a[j as usize]) {
                    axpy(v, dense.row(j as usize), orow);
                }
            }
        });
        Ok(out)
    }

    /// Sparse–sparse product `self · rhs`, accumulated row by row.
    pub fn matmul_sparse(&self, rhs: &CsrMatrix<T>) -> Result<CsrMatrix<T>> {
        if self.cols != rhs.rows {
            return Err(Error::shape("matmul_sparse", self.cols, rhs.rows));
        }
        let mut acc = vec![T::zero(); rhs.cols];
        let mut touched = vec![false; rhs.cols];
        let mut pattern: Vec<u32> = Vec::new();
        let mut indptr = vec![0usize];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for i in 0..self.rows {
            for (k, a) in self.row(i) {
                for (j, b) in rhs.row(k as usize) {
                    let ju = j as usize;
                    if !touched[ju] {
                        touched[ju] = true;
                        pattern.push(j);
                    }
                    acc[ju] += a * b;
                }
            }
            pattern.sort_unstable();
            for &j in &pattern {
                let ju = j as usize;
                if acc[ju] != T::zero() {
                    indices.push(j);
                    values.push(acc[ju]);
                }
                acc[ju] = T::zero();
                touched[ju] = false;
            }
            pattern.clear();
            indptr.push(indices.len());
        }
        Ok(CsrMatrix { rows: self.rows, cols: rhs.cols, indptr, indices, values })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(a: &DenseMatrix<f64>, b: &DenseMatrix<f64>) -> DenseMatrix<f64> {
        DenseMatrix::from_fn(a.rows(), b.cols(), |i, j| (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum())
    }

    fn random_dense(rng: &mut ChaCha8Rng, r: usize, c: usize, density: f64) -> DenseMatrix<f64> {
        DenseMatrix::from_fn(r, c, |_, _| if rng.gen_bool(density) { rng.gen_range(-1.0..1.0) } else { 0.0 })
    }

    #[test]
    fn dense_products_match_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_dense(&mut rng, 7, 5, 0.8);
        let b = random_dense(&mut rng, 5, 4, 0.8);
        let c = random_dense(&mut rng, 7, 4, 0.8);
        assert!(a.matmul(&b, Parallelism::Sequential).unwrap().max_abs_diff(&naive(&a, &b)) < 1e-14);
        let bt = b.transpose();
        assert!(a.matmul_t(&bt, Parallelism::Rayon).unwrap().max_abs_diff(&naive(&a, &b)) < 1e-14);
        assert!(a.t_matmul(&c, Parallelism::Sequential).unwrap().max_abs_diff(&naive(&a.transpose(), &c)) < 1e-14);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = DenseMatrix::<f64>::zeros(2, 3);
        assert!(matches!(a.matmul(&a, Parallelism::Sequential), Err(Error::Shape { .. })));
        let s = CsrMatrix::<f64>::identity(3);
        assert!(s.spmm(&DenseMatrix::zeros(2, 2), Parallelism::Sequential).is_err());
    }

    #[test]
    fn spmm_sequential_and_parallel_are_bitwise_equal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = CsrMatrix::from_dense(&random_dense(&mut rng, 40, 30, 0.2));
        let d = random_dense(&mut rng, 30, 16, 1.0);
        let a = s.spmm(&d, Parallelism::Sequential).unwrap();
        let b = s.spmm(&d, Parallelism::Rayon).unwrap();
        assert_eq!(a, b);
        assert!(a.max_abs_diff(&naive(&s.to_dense(), &d)) <= 1e-12);
    }

    #[test]
    fn spmm_active_skips_masked_rows() {
        let s = CsrMatrix::from_dense(&DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let d = DenseMatrix::from_rows(&[vec![1.0], vec![10.0]]).unwrap();
        let out = s.spmm_active(&d, Some(&[true, false]), Parallelism::Sequential).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 3.0]);
    }

    #[test]
    fn transpose_and_sparse_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_dense(&mut rng, 6, 9, 0.3);
        let b = random_dense(&mut rng, 9, 5, 0.3);
        let sa = CsrMatrix::from_dense(&a);
        assert_eq!(sa.transpose().to_dense(), a.transpose());
        let prod = sa.matmul_sparse(&CsrMatrix::from_dense(&b)).unwrap();
        assert!(prod.to_dense().max_abs_diff(&naive(&a, &b)) < 1e-14);
    }

    #[test]
    fn from_parts_rejects_unsorted_rows() {
        let bad = CsrMatrix::<f64>::from_parts(1, 3, vec![0, 2], vec![2, 1], vec![1.0, 1.0]);
        assert!(bad.is_err());
    }
}

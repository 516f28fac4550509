use std::fmt;

use super::alloc;
use crate::{Error, Result};

/// Dense row-major array of `f64` with an explicit shape.
///
/// The buffer length is fixed at construction; only element values may change
/// afterwards, which keeps the allocation meter exact.
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} holds {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite entry {} at flat index {i}",
                data[i]
            )));
        }
        Ok(Self::wrap(shape.to_vec(), data))
    }

    /// Builds a tensor without the finiteness scan. Callers guarantee the shape.
    pub(crate) fn wrap(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        alloc::record_alloc(data.len() * std::mem::size_of::<f64>());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::wrap(shape.to_vec(), vec![0.0; n])
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::wrap(shape.to_vec(), vec![value; n])
    }

    /// A `[rows, cols]` matrix from a closure over `(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::wrap(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    /// Leading dimension (batch size) of a 2-D tensor; 1 for vectors.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    /// Trailing dimension.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Self::wrap(
            self.shape.clone(),
            self.data.iter().map(|&x| f(x)).collect(),
        )
    }

    /// Elementwise combination of two same-shaped tensors.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check_same(other, "zip_map")?;
        Ok(Self::wrap(
            self.shape.clone(),
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|x| x * s)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        self.check_same(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Concatenates 2-D tensors with equal row counts along columns.
    pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
        let rows = parts.first().map(|t| t.rows()).unwrap_or(0);
        if parts.iter().any(|t| t.rows() != rows) {
            return Err(Error::Shape("concat_cols: row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|t| t.cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for t in parts {
                data.extend_from_slice(t.row(i));
            }
        }
        Ok(Self::wrap(vec![rows, cols], data))
    }

    /// Columns `[start, start + width)` of a 2-D tensor.
    pub fn slice_cols(&self, start: usize, width: usize) -> Result<Tensor> {
        if start + width > self.cols() {
            return Err(Error::Shape(format!(
                "slice_cols [{start}, {}) out of {} columns",
                start + width,
                self.cols()
            )));
        }
        let rows = self.rows();
        let mut data = Vec::with_capacity(rows * width);
        for i in 0..rows {
            data.extend_from_slice(&self.row(i)[start..start + width]);
        }
        Ok(Self::wrap(vec![rows, width], data))
    }

    /// Rows `indices` of a 2-D tensor, in order, repeats allowed.
    pub fn gather_rows(&self, indices: &[usize]) -> Tensor {
        let cols = self.cols();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self::wrap(vec![indices.len(), cols], data)
    }

    /// Column vector `[n, 1]` from a slice.
    pub fn column(values: &[f64]) -> Tensor {
        Self::wrap(vec![values.len(), 1], values.to_vec())
    }

    fn check_same(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "{op}: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}

impl Clone for Tensor {
    fn clone(&self) -> Self {
        Self::wrap(self.shape.clone(), self.data.clone())
    }
}

impl Drop for Tensor {
    fn drop(&mut self) {
        alloc::record_free(self.data.len() * std::mem::size_of::<f64>());
    }
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

/// Inner dimensions up to this size take the direct loops below; the packed
/// kernel's setup dominates at these shapes.
const NARROW: usize = 4;

/// `c = a · b` for row-major `a: [m, k]`, `b: [k, n]`.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    if n <= NARROW && k > 0 {
        let mut bt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        for (a_row, c_row) in a.chunks_exact(k).zip(c.chunks_exact_mut(n)).take(m) {
            for (cj, bt_row) in c_row.iter_mut().zip(bt.chunks_exact(k)) {
                *cj = dot(a_row, bt_row);
            }
        }
        return;
    }
    gemm(a, (k as isize, 1), b, (n as isize, 1), m, k, n, c, 0.0);
}

/// `c += aᵀ · b` for row-major `a: [k, m]`, `b: [k, n]`; result `[m, n]`.
pub(crate) fn matmul_at_b_acc(a: &[f64], b: &[f64], k: usize, m: usize, n: usize, c: &mut [f64]) {
    if n <= NARROW && m > 0 {
        let mut col = vec![0.0; m];
        for j in 0..n {
            col.iter_mut().for_each(|x| *x = 0.0);
            for (a_row, b_row) in a.chunks_exact(m).zip(b.chunks_exact(n)).take(k) {
                let w = b_row[j];
                for (x, &v) in col.iter_mut().zip(a_row) {
                    *x += v * w;
                }
            }
            for (i, &x) in col.iter().enumerate() {
                c[i * n + j] += x;
            }
        }
        return;
    }
    gemm(a, (1, m as isize), b, (n as isize, 1), m, k, n, c, 1.0);
}

/// `c = a · bᵀ` for row-major `a: [m, k]`, `b: [n, k]`; result `[m, n]`.
pub(crate) fn matmul_a_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    if n <= NARROW && k > 0 {
        for (a_row, c_row) in a.chunks_exact(k).zip(c.chunks_exact_mut(n)).take(m) {
            for (cj, b_row) in c_row.iter_mut().zip(b.chunks_exact(k)) {
                *cj = dot(a_row, b_row);
            }
        }
        return;
    }
    if k <= NARROW && k > 0 && n > 0 {
        let mut bt = vec![0.0; k * n];
        for j in 0..n {
            for p in 0..k {
                bt[p * n + j] = b[j * k + p];
            }
        }
        for (a_row, c_row) in a.chunks_exact(k).zip(c.chunks_exact_mut(n)).take(m) {
            c_row.iter_mut().for_each(|x| *x = 0.0);
            for (&w, bt_row) in a_row.iter().zip(bt.chunks_exact(n)) {
                for (x, &v) in c_row.iter_mut().zip(bt_row) {
                    *x += w * v;
                }
            }
        }
        return;
    }
    gemm(a, (k as isize, 1), b, (1, k as isize), m, k, n, c, 0.0);
}

/// Dot product with four interleaved partial sums.
#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (xc, yc) = (x.chunks_exact(4), y.chunks_exact(4));
    let tail: f64 = xc
        .remainder()
        .iter()
        .zip(yc.remainder())
        .map(|(a, b)| a * b)
        .sum();
    for (a, b) in xc.zip(yc) {
        for l in 0..4 {
            acc[l] += a[l] * b[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Sum with four interleaved partial sums.
#[inline]
pub(crate) fn sum4(x: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let xc = x.chunks_exact(4);
    let tail: f64 = xc.remainder().iter().sum();
    for a in xc {
        for l in 0..4 {
            acc[l] += a[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    m: usize,
    k: usize,
    n: usize,
    c: &mut [f64],
    beta: f64,
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c[..m * n].iter_mut().for_each(|x| *x = 0.0);
        }
        return;
    }
    // SAFETY: strides and extents describe regions inside the given slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_bad_shape_and_nan() {
        assert!(matches!(
            Tensor::from_vec(&[2, 2], vec![1.0; 3]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            Tensor::from_vec(&[2], vec![1.0, f64::NAN]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn gemm_variants_match_loops() {
        let a: Vec<f64> = (0..6).map(|i| i as f64 * 0.5 - 1.0).collect(); // [2,3]
        let b: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect(); // [3,4]
        let mut c = vec![0.0; 8];
        matmul(&a, &b, 2, 3, 4, &mut c);
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|p| a[i * 3 + p] * b[p * 4 + j]).sum();
                assert!((c[i * 4 + j] - want).abs() < 1e-14);
            }
        }
        // aᵀ·b with a: [2,3] as [k=2, m=3], b2: [2,4]
        let b2: Vec<f64> = (0..8).map(|i| (i as f64).cos()).collect();
        let mut d = vec![1.0; 12];
        matmul_at_b_acc(&a, &b2, 2, 3, 4, &mut d);
        for i in 0..3 {
            for j in 0..4 {
                let want: f64 = 1.0 + (0..2).map(|p| a[p * 3 + i] * b2[p * 4 + j]).sum::<f64>();
                assert!((d[i * 4 + j] - want).abs() < 1e-14);
            }
        }
        // a·bᵀ with a: [2,3], b3: [4,3]
        let b3: Vec<f64> = (0..12).map(|i| (i as f64 * 0.3).tan()).collect();
        let mut e = vec![0.0; 8];
        matmul_a_bt(&a, &b3, 2, 3, 4, &mut e);
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|p| a[i * 3 + p] * b3[j * 3 + p]).sum();
                assert!((e[i * 4 + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn narrow_paths_match_loops() {
        let (m, k) = (7, 9);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        for n in 1..=6 {
            let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
            let mut c = vec![0.0; m * n];
            matmul(&a, &b, m, k, n, &mut c);
            let mut e = vec![0.0; m * n];
            // b read as [n, k]
            matmul_a_bt(&a, &b, m, k, n, &mut e);
            for i in 0..m {
                for j in 0..n {
                    let want: f64 = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
                    assert!((c[i * n + j] - want).abs() < 1e-13);
                    let want: f64 = (0..k).map(|p| a[i * k + p] * b[j * k + p]).sum();
                    assert!((e[i * n + j] - want).abs() < 1e-13);
                }
            }
            // a read as [k', m'] = [m, k], b2: [m, n]
            let b2: Vec<f64> = (0..m * n).map(|i| (i as f64 * 0.7).sin()).collect();
            let mut d = vec![0.5; k * n];
            matmul_at_b_acc(&a, &b2, m, k, n, &mut d);
            for i in 0..k {
                for j in 0..n {
                    let want = 0.5 + (0..m).map(|p| a[p * k + i] * b2[p * n + j]).sum::<f64>();
                    assert!((d[i * n + j] - want).abs() < 1e-13);
                }
            }
        }
        // small inner dimension for a · bᵀ
        let (m, k, n) = (5, 2, 8);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 - 3.0).collect();
        let b: Vec<f64> = (0..n * k).map(|i| (i as f64).sqrt()).collect();
        let mut e = vec![0.0; m * n];
        matmul_a_bt(&a, &b, m, k, n, &mut e);
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|p| a[i * k + p] * b[j * k + p]).sum();
                assert!((e[i * n + j] - want).abs() < 1e-13);
            }
        }
        assert_eq!(sum4(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]), 28.0);
        assert_eq!(dot(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]), 32.0);
    }

    #[test]
    fn concat_and_slice_are_inverse() {
        let a = Tensor::from_fn(3, 2, |i, j| (i * 2 + j) as f64);
        let b = Tensor::from_fn(3, 1, |i, _| -(i as f64));
        let c = Tensor::concat_cols(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[3, 3]);
        assert_eq!(c.slice_cols(0, 2).unwrap(), a);
        assert_eq!(c.slice_cols(2, 1).unwrap(), b);
    }
}

//! Dense row-major f32 tensors and the raw numeric kernels behind the
//! autodiff tape.

use crate::error::{Error, Result};
use crate::parallel;

/// Dense numeric array with shape, row-major. The unit of all computation.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, checking that `data.len()` equals the shape product.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Data(format!("zero-sized dimension in shape {shape:?}")));
        }
        if data.len() != numel {
            return Err(Error::Data(format!(
                "data length {} does not match shape {:?} (numel {})",
                data.len(),
                shape,
                numel
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel] }
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![value; numel] }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    /// 2-D constructor from rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Data("ragged rows".into()));
        }
        let mut data = Vec::with_capacity(m * n);
        for r in rows {
            data.extend_from_slice(r);
        }
        Tensor::new(vec![m, n], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Number of rows when interpreted as a matrix ([n] counts as one row).
    pub fn rows(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Number of columns when interpreted as a matrix.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 0,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row `i` as a slice (matrix interpretation).
    pub fn row(&self, i: usize) -> &[f32] {
        let n = self.cols();
        &self.data[i * n..(i + 1) * n]
    }
}

/// C[m,n] = A[m,k] * B[k,n], row-major. Delegates to a tuned GEMM kernel;
/// rows are split across the configured worker threads, which keeps the
/// per-element accumulation order fixed regardless of thread count.
pub fn matmul_f32(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut c = vec![0.0f32; m * n];
    let threads = parallel::threads();
    if threads <= 1 || m < 2 * threads {
        unsafe {
            matrixmultiply::sgemm(
                m, k, n, 1.0, a.as_ptr(), k as isize, 1, b.as_ptr(), n as isize, 1, 0.0,
                c.as_mut_ptr(), n as isize, 1,
            );
        }
        return c;
    }
    let rows_per = m.div_ceil(threads);
    let a_chunks: Vec<&[f32]> = a.chunks(rows_per * k).collect();
    let c_chunks: Vec<&mut [f32]> = c.chunks_mut(rows_per * n).collect();
    parallel::pool().install(|| {
        use rayon::prelude::*;
        a_chunks
            .into_par_iter()
            .zip(c_chunks)
            .for_each(|(a_blk, c_blk)| {
                let mb = a_blk.len() / k;
                unsafe {
                    matrixmultiply::sgemm(
                        mb, k, n, 1.0, a_blk.as_ptr(), k as isize, 1, b.as_ptr(), n as isize, 1,
                        0.0, c_blk.as_mut_ptr(), n as isize, 1,
                    );
                }
            });
    });
    c
}

/// Like [`matmul_f32`] but with either input logically transposed.
/// `a` is `m x k` after transposition, likewise `b` is `k x n`.
pub fn matmul_f32_t(
    a: &[f32], a_trans: bool, b: &[f32], b_trans: bool, m: usize, k: usize, n: usize,
) -> Vec<f32> {
    let mut c = vec![0.0f32; m * n];
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::sgemm(
            m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, 0.0, c.as_mut_ptr(),
            n as isize, 1,
        );
    }
    c
}

/// f64 matrix product for the finite-difference oracle path.
pub fn matmul_f64(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0f64; m * n];
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), k as isize, 1, b.as_ptr(), n as isize, 1, 0.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
    c
}

pub(crate) fn dim_error(op: &'static str, left: &[usize], right: &[usize]) -> Error {
    Error::Dimension { op, left: left.to_vec(), right: right.to_vec() }
}

//! Dense numeric kernels: matrix multiply, row softmax, L2 normalization, dot.
//!
//! Values are stored as f32 in row-major order; every reduction accumulates
//! in f64 and rounds once at the end. All kernels work row by row in index
//! order, so results do not depend on how a sequence was batched.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Error;

/// Row-major f32 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    /// Wraps existing row-major data. Panics if `data.len() != rows * cols`.
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Matrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Standard matrix product `a * b` with f64 accumulation per output element.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix, Error> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch {
            left_rows: a.rows,
            left_cols: a.cols,
            right_rows: b.rows,
            right_cols: b.cols,
        });
    }
    let cols = b.cols;
    let mut out = Matrix::zeros(a.rows, cols);
    let mut acc = vec![0.0f64; cols];
    for i in 0..a.rows {
        acc.fill(0.0);
        let a_row = a.row(i);
        // Four k-steps per pass cuts accumulator traffic; each output row
        // is still an independent left-to-right f64 reduction. Slices are
        // pinned to `cols` so the inner loop stays bounds-check free.
        let mut k = 0;
        while k + 4 <= a.cols {
            let (a0, a1, a2, a3) = (
                a_row[k] as f64,
                a_row[k + 1] as f64,
                a_row[k + 2] as f64,
                a_row[k + 3] as f64,
            );
            let b0 = &b.row(k)[..cols];
            let b1 = &b.row(k + 1)[..cols];
            let b2 = &b.row(k + 2)[..cols];
            let b3 = &b.row(k + 3)[..cols];
            let acc = &mut acc[..cols];
            for j in 0..cols {
                acc[j] +=
                    a0 * b0[j] as f64 + a1 * b1[j] as f64 + a2 * b2[j] as f64 + a3 * b3[j] as f64;
            }
            k += 4;
        }
        while k < a.cols {
            let aik = a_row[k] as f64;
            for (sum, &bkj) in acc.iter_mut().zip(b.row(k)) {
                *sum += aik * bkj as f64;
            }
            k += 1;
        }
        for (o, &sum) in out.row_mut(i).iter_mut().zip(acc.iter()) {
            *o = sum as f32;
        }
    }
    debug_assert!(out.is_finite(), "matmul produced non-finite values");
    Ok(out)
}

/// Softmax over a single slice, with max subtraction for stability.
pub(crate) fn softmax_in_place(row: &mut [f32]) {
    if row.is_empty() {
        return;
    }
    let mut max = row[0];
    for &v in row.iter().skip(1) {
        if v > max {
            max = v;
        }
    }
    let mut sum = 0.0f64;
    for v in row.iter_mut() {
        *v = libm::expf(*v - max);
        sum += *v as f64;
    }
    for v in row.iter_mut() {
        *v = (*v as f64 / sum) as f32;
    }
}

/// Softmax applied independently to every row.
pub fn row_softmax(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..out.rows {
        softmax_in_place(out.row_mut(i));
    }
    debug_assert!(out.is_finite(), "row_softmax produced non-finite values");
    out
}

/// Scales `v` to unit L2 norm. Fails on zero-norm or empty input.
pub fn l2_normalize(v: &[f32]) -> Result<Vec<f32>, Error> {
    let sumsq: f64 = v.iter().map(|&x| x as f64 * x as f64).sum();
    if sumsq == 0.0 || !sumsq.is_finite() {
        return Err(Error::DegenerateEmbedding);
    }
    let inv = 1.0 / libm::sqrt(sumsq);
    Ok(v.iter().map(|&x| (x as f64 * inv) as f32).collect())
}

/// Dot product with f64 accumulation. Panics on length mismatch.
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len(), "dot length mismatch");
    let mut sum = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        sum += x as f64 * y as f64;
    }
    sum as f32
}

//! Dense row-major `f64` matrices and the handful of row-wise kernels the
//! attention code needs: stable softmax, row normalization and the
//! `base * exp(exponent)` product used by the tuner.

use thiserror::Error;

/// Rows whose sum falls below this are treated as fully suppressed.
pub const ZERO_ROW_EPS: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("row {row} sums to {sum:e}, cannot normalize")]
    ZeroRow { row: usize, sum: f64 },
    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("data length {len} does not match {rows}x{cols}")]
    BadLength { rows: usize, cols: usize, len: usize },
}

impl TensorError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::ShapeMismatch { .. } => "ShapeMismatch",
            Self::ZeroRow { .. } => "ZeroRow",
            Self::NonFinite { .. } => "NonFinite",
            Self::BadLength { .. } => "BadLength",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Builds a matrix from row-major data, rejecting NaN/Inf.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        if data.len() != rows * cols {
            return Err(TensorError::BadLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite {
                row: pos / cols.max(1),
                col: pos % cols.max(1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(TensorError::ShapeMismatch {
                    left: (i, cols),
                    right: (i, row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
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

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        &mut self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |r| self.row(r))
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix, TensorError> {
        if self.cols != rhs.rows {
            return Err(TensorError::ShapeMismatch {
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let lhs_row = self.row(i);
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in lhs_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&self, factor: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Copies rows `[start, end)` into a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Copies the block `rows x cols` with top-left corner at `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |i, j| self.get(r0 + i, c0 + j))
    }

    /// Stacks `self` on top of `below`.
    pub fn vstack(&self, below: &Matrix) -> Result<Matrix, TensorError> {
        if self.cols != below.cols {
            return Err(TensorError::ShapeMismatch {
                left: self.shape(),
                right: below.shape(),
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&below.data);
        Ok(Matrix {
            rows: self.rows + below.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.iter_rows().map(|r| r.iter().sum()).collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &Matrix) -> bool {
        self.shape() == other.shape()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64, TensorError> {
        ensure_same_shape(self, other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

fn ensure_same_shape(a: &Matrix, b: &Matrix) -> Result<(), TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

/// In-place softmax of one row with max subtraction.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Row-wise softmax. Inputs must be finite.
pub fn row_softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows {
        softmax_in_place(out.row_mut(r));
    }
    out
}

/// Divides one row by its sum. `row` is the row index, used for the error.
pub fn normalize_in_place(values: &mut [f64], row: usize) -> Result<(), TensorError> {
    let sum: f64 = values.iter().sum();
    if !sum.is_finite() {
        return Err(TensorError::NonFinite { row, col: 0 });
    }
    if sum < ZERO_ROW_EPS {
        return Err(TensorError::ZeroRow { row, sum });
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
    Ok(())
}

/// Scales every row of a non-negative matrix to sum to one.
pub fn row_normalize(weights: &Matrix) -> Result<Matrix, TensorError> {
    let mut out = weights.clone();
    for r in 0..out.rows {
        normalize_in_place(out.row_mut(r), r)?;
    }
    Ok(out)
}

/// Elementwise `base * exp(exponent)`.
pub fn hadamard_exp(base: &Matrix, exponent: &Matrix) -> Result<Matrix, TensorError> {
    ensure_same_shape(base, exponent)?;
    let data: Vec<f64> = base
        .data
        .iter()
        .zip(&exponent.data)
        .map(|(b, e)| b * e.exp())
        .collect();
    Matrix::from_vec(base.rows, base.cols, data)
}

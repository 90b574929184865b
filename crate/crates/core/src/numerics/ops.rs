//! Forward kernels for the differentiable primitives.
//!
//! These are plain functions on [`Matrix`]; the autodiff [`Graph`](super::Graph)
//! records them and supplies the matching backward rules.

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

pub fn relu<S: Scalar>(x: &Matrix<S>) -> Matrix<S> {
    x.map(|v| if v > S::zero() { v } else { S::zero() })
}

/// Row-wise softmax, stabilized by subtracting each row's maximum.
pub fn softmax_rows<S: Scalar>(x: &Matrix<S>) -> Matrix<S> {
    let mut out = x.clone();
    let cols = x.cols();
    for row in out.data_mut().chunks_mut(cols.max(1)) {
        let max = row.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
        let mut total = S::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// Output length of a non-overlapping pool with a kept partial final window.
pub fn pooled_len(len: usize, kernel: usize) -> usize {
    len.div_ceil(kernel)
}

/// Non-overlapping max pooling along each row (stride = `kernel`).
///
/// The final window may be partial. Returns the pooled values together with
/// the flat source index of each window's first maximum.
pub fn maxpool1d<S: Scalar>(x: &Matrix<S>, kernel: usize) -> Result<(Matrix<S>, Vec<usize>)> {
    if kernel < 1 {
        return Err(Error::Param(format!("max-pool kernel must be >= 1, got {kernel}")));
    }
    let (rows, cols) = x.shape();
    let out_cols = pooled_len(cols, kernel);
    let mut values = Vec::with_capacity(rows * out_cols);
    let mut argmax = Vec::with_capacity(rows * out_cols);
    for r in 0..rows {
        let row = x.row(r);
        for w in 0..out_cols {
            let start = w * kernel;
            let end = (start + kernel).min(cols);
            let mut best = start;
            for i in start + 1..end {
                if row[i] > row[best] {
                    best = i;
                }
            }
            values.push(row[best]);
            argmax.push(r * cols + best);
        }
    }
    Ok((Matrix::new(rows, out_cols, values)?, argmax))
}

/// Appends the columns of `parts` left to right.
pub fn concat_cols<S: Scalar>(parts: &[&Matrix<S>]) -> Result<Matrix<S>> {
    let Some(first) = parts.first() else {
        return Err(Error::shape("concat_cols", "no parts"));
    };
    let rows = first.rows();
    if let Some(bad) = parts.iter().find(|p| p.rows() != rows) {
        return Err(Error::shape(
            "concat_cols",
            format!("row counts differ: {} vs {}", rows, bad.rows()),
        ));
    }
    let cols: usize = parts.iter().map(|p| p.cols()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row(r));
        }
    }
    Matrix::new(rows, cols, data)
}

/// Stacks `parts` top to bottom.
pub fn concat_rows<S: Scalar>(parts: &[&Matrix<S>]) -> Result<Matrix<S>> {
    let Some(first) = parts.first() else {
        return Err(Error::shape("concat_rows", "no parts"));
    };
    let cols = first.cols();
    if let Some(bad) = parts.iter().find(|p| p.cols() != cols) {
        return Err(Error::shape(
            "concat_rows",
            format!("column counts differ: {} vs {}", cols, bad.cols()),
        ));
    }
    let data: Vec<S> = parts.iter().flat_map(|p| p.data().iter().copied()).collect();
    Matrix::new(data.len() / cols.max(1), cols, data)
}

/// Splits `m` into column blocks of the given widths; inverse of [`concat_cols`].
pub fn split_cols<S: Scalar>(m: &Matrix<S>, widths: &[usize]) -> Result<Vec<Matrix<S>>> {
    if widths.iter().sum::<usize>() != m.cols() {
        return Err(Error::shape(
            "split_cols",
            format!("widths {widths:?} do not cover {} columns", m.cols()),
        ));
    }
    let mut offset = 0;
    let mut out = Vec::with_capacity(widths.len());
    for &w in widths {
        out.push(Matrix::from_fn(m.rows(), w, |r, c| m.get(r, offset + c)));
        offset += w;
    }
    Ok(out)
}

/// Mean squared error over all entries.
pub fn mse<S: Scalar>(pred: &Matrix<S>, target: &Matrix<S>) -> Result<S> {
    if pred.len() != target.len() {
        return Err(Error::shape(
            "mse",
            format!("prediction has {} values, target {}", pred.len(), target.len()),
        ));
    }
    let n = S::of_usize(pred.len().max(1));
    let total = pred
        .data()
        .iter()
        .zip(target.data())
        .fold(S::zero(), |acc, (&p, &t)| acc + (p - t) * (p - t));
    Ok(total / n)
}

//! Dense numeric primitives and the central finite-difference oracle.
//!
//! Reductions accumulate strictly left to right so that results are
//! bit-reproducible on a given platform.

use std::ops::Deref;

use crate::error::{FanError, Result};
use crate::scalar::Scalar;

/// Non-empty vector of finite scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector<T>(Vec<T>);

impl<T: Scalar> Vector<T> {
    pub fn new(data: Vec<T>) -> Result<Self> {
        if data.is_empty() {
            return Err(FanError::Dimension("zero-length vector".into()));
        }
        if let Some(j) = data.iter().position(|x| !x.is_finite()) {
            return Err(FanError::Numeric(format!(
                "non-finite vector entry at index {j}"
            )));
        }
        Ok(Self(data))
    }

    pub fn zeros(len: usize) -> Result<Self> {
        Self::new(vec![T::zero(); len])
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    /// Mutable access for in-place updates. Callers that write through
    /// this must re-establish finiteness (see [`Vector::check_finite`]).
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.0
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.0.iter().position(|x| !x.is_finite()) {
            Some(j) => Err(FanError::Numeric(format!(
                "non-finite vector entry at index {j}"
            ))),
            None => Ok(()),
        }
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }
}

impl<T> Deref for Vector<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.0
    }
}

/// Row-major dense matrix with at least one row and one column.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(FanError::Dimension(format!(
                "matrix must be non-empty, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(FanError::Dimension(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(j) = data.iter().position(|x| !x.is_finite()) {
            return Err(FanError::Numeric(format!(
                "non-finite matrix entry at row {}, col {}",
                j / cols,
                j % cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![T::zero(); rows * cols])
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(FanError::Dimension(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    /// New matrix made of the given rows of `self`, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(FanError::Index(format!(
                    "row {i} out of range for {} rows",
                    self.rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::new(indices.len(), self.cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        self.data.chunks_exact(self.cols)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|x| !x.is_finite()) {
            Some(j) => Err(FanError::Numeric(format!(
                "non-finite matrix entry at row {}, col {}",
                j / self.cols,
                j % self.cols
            ))),
            None => Ok(()),
        }
    }

    /// `self · x` for a column vector `x` of length `cols`.
    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.cols {
            return Err(FanError::Dimension(format!(
                "matvec: matrix has {} columns, vector has {} entries",
                self.cols,
                x.len()
            )));
        }
        Ok(self.row_iter().map(|r| dot_unchecked(r, x)).collect())
    }
}

/// Logistic function, evaluated without ever exponentiating a positive
/// argument.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn dot_unchecked<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Inner product with fixed left-to-right accumulation.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(FanError::Dimension(format!(
            "dot of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(dot_unchecked(a, b))
}

pub fn concat<T: Scalar>(a: &[T], b: &[T]) -> Result<Vector<T>> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    Vector::new(out)
}

/// Softmax probabilities with max subtraction.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total = exps.iter().copied().fold(T::zero(), |a, b| a + b);
    exps.into_iter().map(|e| e / total).collect()
}

/// Cross-entropy of `softmax(logits)` against `label`, and its gradient
/// with respect to the logits (`softmax - onehot`).
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], label: usize) -> Result<(T, Vec<T>)> {
    if label >= logits.len() {
        return Err(FanError::Index(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total = exps.iter().copied().fold(T::zero(), |a, b| a + b);
    let loss = total.ln() - (logits[label] - max);
    let mut grad: Vec<T> = exps.into_iter().map(|e| e / total).collect();
    grad[label] = grad[label] - T::one();
    if !loss.is_finite() {
        return Err(FanError::Numeric("non-finite cross-entropy".into()));
    }
    Ok((loss.max(T::zero()), grad))
}

/// Central-difference gradient of `loss_fn` at `params`.
pub fn finite_diff_gradient<T, F>(loss_fn: F, params: &[T], eps: T) -> Result<Vec<T>>
where
    T: Scalar,
    F: Fn(&[T]) -> T,
{
    if eps.is_nan() || eps <= T::zero() {
        return Err(FanError::Domain(
            "finite-difference step must be positive".into(),
        ));
    }
    let mut probe = params.to_vec();
    let two_eps = eps + eps;
    let mut grad = Vec::with_capacity(params.len());
    for j in 0..params.len() {
        probe[j] = params[j] + eps;
        let up = loss_fn(&probe);
        probe[j] = params[j] - eps;
        let down = loss_fn(&probe);
        probe[j] = params[j];
        if !up.is_finite() || !down.is_finite() {
            return Err(FanError::Numeric(format!(
                "non-finite loss while probing coordinate {j}"
            )));
        }
        grad.push((up - down) / two_eps);
    }
    Ok(grad)
}

/// `|a - b| / max(1e-8, |a| + |b|)`.
pub fn relative_error<T: Scalar>(a: T, b: T) -> T {
    (a - b).abs() / (a.abs() + b.abs()).max(T::lit(1e-8))
}

//! Dense tensor values exchanged between the interpreter and the oracles.

use serde::{Deserialize, Serialize};

use crate::graph::{DType, Shape};

/// A dense row-major tensor. Elements are stored as `f64` and always hold values
/// already rounded to `dtype`; NaN and infinities are kept as-is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorValue {
    pub dtype: DType,
    pub shape: Shape,
    pub data: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
#[error("tensor data has {len} elements but shape {shape} needs {numel}")]
pub struct TensorLenError {
    pub len: usize,
    pub shape: Shape,
    pub numel: usize,
}

impl TensorValue {
    pub fn new(dtype: DType, shape: impl Into<Shape>, data: Vec<f64>) -> Result<Self, TensorLenError> {
        let shape = shape.into();
        let numel = shape.numel();
        if data.len() != numel {
            return Err(TensorLenError { len: data.len(), shape, numel });
        }
        let data = data.into_iter().map(|x| dtype.round(x)).collect();
        Ok(Self { dtype, shape, data })
    }

    /// Builds a tensor from data known to match the shape; rounds to `dtype`.
    pub(crate) fn from_raw(dtype: DType, shape: Shape, mut data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), shape.numel());
        if dtype != DType::F64 {
            for x in &mut data {
                *x = dtype.round(*x);
            }
        }
        Self { dtype, shape, data }
    }

    pub fn zeros(dtype: DType, shape: impl Into<Shape>) -> Self {
        let shape = shape.into();
        let n = shape.numel();
        Self { dtype, shape, data: vec![0.0; n] }
    }

    pub fn scalar(dtype: DType, value: f64) -> Self {
        Self { dtype, shape: Shape::scalar(), data: vec![dtype.round(value)] }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn has_nan(&self) -> bool {
        self.data.iter().any(|x| x.is_nan())
    }

    pub fn has_inf(&self) -> bool {
        self.data.iter().any(|x| x.is_infinite())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest absolute value ignoring NaN; `0.0` for empty tensors.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().filter(|x| !x.is_nan()).fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn min_max(&self) -> Option<(f64, f64)> {
        let mut it = self.data.iter().copied().filter(|x| !x.is_nan());
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), x| (lo.min(x), hi.max(x))))
    }

    /// Element-wise equality where NaN equals NaN and `-0.0 == 0.0`.
    pub fn same_values(&self, other: &TensorValue) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a == b || (a.is_nan() && b.is_nan()))
    }
}

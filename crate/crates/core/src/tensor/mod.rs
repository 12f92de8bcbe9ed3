//! Dense row-major tensors and the hand-derived forward/backward math for
//! every layer the network uses.
//!
//! Operations are free functions over immutable inputs. Batch-less layouts
//! are used for the volumetric ops (`[C, D, H, W]`); `linear` and the loss
//! take an explicit batch axis.

mod conv;
pub mod gradcheck;
mod ops;
mod pool;

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub(crate) use conv::conv3d_backward_params;
pub use conv::{conv3d, conv3d_backward, Conv3dGrads, ConvParams};
pub use gradcheck::{finite_difference, grad_check, relative_error, Conv3d, Layer, Linear, MaxPool3d, Relu};
pub use ops::{
    linear, linear_backward, relu, relu_backward, residual_add, residual_add_backward, softmax,
    softmax_cross_entropy, CrossEntropy, LinearGrads, ResidualGrads,
};
pub use pool::{maxpool3d, maxpool3d_backward, Pooled};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("tensor shape must have at least one axis")]
    EmptyShape,
    #[error("axis {axis} has length zero in shape {shape:?}")]
    ZeroAxis { axis: usize, shape: Vec<usize> },
    #[error("shape {shape:?} holds {expected} elements but buffer has {actual}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: shape mismatch ({detail})")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: output axis {axis} would be degenerate (input {input}, kernel {kernel}, stride {stride}, padding {padding})")]
    DegenerateOutput {
        op: &'static str,
        axis: usize,
        input: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    #[error("{op}: stride on axis {axis} must be positive")]
    ZeroStride { op: &'static str, axis: usize },
    #[error("target {target} at row {row} is out of range for {classes} categories")]
    TargetOutOfRange {
        row: usize,
        target: usize,
        classes: usize,
    },
    #[error("category weight {index} must be positive and finite, got {value}")]
    InvalidWeight { index: usize, value: f64 },
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Single,
    Double,
}

/// Floating point element type of a [`Tensor`].
pub trait Scalar:
    Float + Default + fmt::Debug + fmt::Display + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    const PRECISION: Precision;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::Single;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::Double;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

/// Dense row-major multi-axis array.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(TensorError::EmptyShape);
    }
    if let Some(axis) = shape.iter().position(|&n| n == 0) {
        return Err(TensorError::ZeroAxis {
            axis,
            shape: shape.to_vec(),
        });
    }
    Ok(shape.iter().product())
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected = check_shape(shape)?;
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::one())
    }

    /// Builds a tensor by calling `f` with each linear offset in order.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> T) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: (0..n).map(f).collect(),
        })
    }

    pub(crate) fn zeros_like_shape(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn precision(&self) -> Precision {
        T::PRECISION
    }

    /// Row-major linear offset of a multi-index, `None` when out of bounds.
    pub fn offset(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut off = 0;
        for (&i, &n) in index.iter().zip(&self.shape) {
            if i >= n {
                return None;
            }
            off = off * n + i;
        }
        Some(off)
    }

    pub fn get(&self, index: &[usize]) -> Option<T> {
        self.offset(index).map(|o| self.data[o])
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let expected = check_shape(shape)?;
        if expected != self.data.len() {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                expected,
                actual: self.data.len(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// Sub-tensor along the leading axis.
    pub fn slice_outer(&self, i: usize) -> Option<Self> {
        let outer = *self.shape.first()?;
        if i >= outer || self.shape.len() < 2 {
            return None;
        }
        let inner: usize = self.shape[1..].iter().product();
        Some(Self {
            shape: self.shape[1..].to_vec(),
            data: self.data[i * inner..(i + 1) * inner].to_vec(),
        })
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items.first().ok_or(TensorError::EmptyShape)?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(TensorError::ShapeMismatch {
                    op: "stack",
                    detail: format!("{:?} vs {:?}", t.shape, first.shape),
                });
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Self { shape, data })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match self.shape[..] {
            [c, d, h, w] => Ok([c, d, h, w]),
            _ => Err(TensorError::ShapeMismatch {
                op,
                detail: format!("expected rank 4 [C,D,H,W], got {:?}", self.shape),
            }),
        }
    }

    pub(crate) fn dims2(&self, op: &'static str) -> Result<[usize; 2]> {
        match self.shape[..] {
            [a, b] => Ok([a, b]),
            _ => Err(TensorError::ShapeMismatch {
                op,
                detail: format!("expected rank 2, got {:?}", self.shape),
            }),
        }
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field(
                "data",
                &format_args!(
                    "{:?}{}",
                    &self.data[..self.data.len().min(PREVIEW)],
                    if self.data.len() > PREVIEW { " .." } else { "" }
                ),
            )
            .finish()
    }
}

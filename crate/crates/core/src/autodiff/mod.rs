//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Graph`] is an eagerly-evaluated tape: every operation computes its
//! value on creation and records enough to propagate gradients backwards.
//! The op set is exactly what the cascaded networks need: 3x3
//! same-padding convolution, 2x2 max pooling and nearest-neighbor
//! upsampling, ReLU, inverted dropout, channel softmax, channel
//! concatenation, the two losses, and weighted sums of scalar losses.
//!
//! The element type is generic over [`Scalar`] (`f32` or `f64`): training
//! runs in 32-bit storage while gradient checks run the same code in
//! 64-bit. Loss reductions always accumulate in 64-bit.

mod checkpoint;
mod graph;
mod optim;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use graph::{Graph, TensorRef};
pub use optim::AdaDelta;

use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("odd spatial dimension: {0}")]
    OddSpatialDim(String),
}

/// Real element type of tensors: `f32` or `f64`.
pub trait Scalar:
    Copy
    + Send
    + Sync
    + PartialOrd
    + PartialEq
    + std::fmt::Debug
    + Default
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn sqrt_s(self) -> Self;
    fn exp_s(self) -> Self;
    fn ln_s(self) -> Self;
    fn max_s(self, other: Self) -> Self;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn sqrt_s(self) -> Self {
        self.sqrt()
    }
    #[inline]
    fn exp_s(self) -> Self {
        self.exp()
    }
    #[inline]
    fn ln_s(self) -> Self {
        self.ln()
    }
    #[inline]
    fn max_s(self, other: Self) -> Self {
        self.max(other)
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn sqrt_s(self) -> Self {
        self.sqrt()
    }
    #[inline]
    fn exp_s(self) -> Self {
        self.exp()
    }
    #[inline]
    fn ln_s(self) -> Self {
        self.ln()
    }
    #[inline]
    fn max_s(self, other: Self) -> Self {
        self.max(other)
    }
}

/// Dense n-dimensional array, flat row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![S::ZERO; numel] }
    }

    pub fn filled(shape: &[usize], value: S) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length must match shape"
        );
        Self { shape: shape.to_vec(), data }
    }

    pub fn from_f64_slice(shape: &[usize], values: &[f64]) -> Self {
        Self::from_vec(shape, values.iter().map(|&v| S::from_f64(v)).collect())
    }

    pub fn scalar(value: S) -> Self {
        Self { shape: vec![], data: vec![value] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Interpret shape as (batch, channels, height, width).
    pub fn nchw(&self) -> (usize, usize, usize, usize) {
        assert_eq!(self.shape.len(), 4, "expected NCHW tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2], self.shape[3])
    }

    /// Lossy cast to another scalar type (used for checkpoints).
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| T::from_f64(v.to_f64())).collect(),
        }
    }
}

//! Minimal reverse-mode network toolkit.
//!
//! Activations are row-major matrices. Convolutional layers view their input
//! as `rows = batch * K * N_t` positions with one column per channel, so a
//! `(1, d)` kernel slides along consecutive rows within each run of `N_t`.
//! Every layer caches what its backward pass needs during [`Layer::forward`];
//! [`Layer::infer`] is cache-free and uses running statistics.

mod activation;
mod adam;
mod conv;
mod dense;
mod dropout;
mod norm;
pub mod spec;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{Array1, Array2, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};

pub use activation::{Activation, ActivationKind};
pub use adam::Adam;
pub use conv::Conv1xD;
pub use dense::Dense;
pub use dropout::Dropout;
pub use norm::BatchNorm;
pub use spec::{LayerSpec, Sequential};

/// Floating-point element type of a network.
pub trait Scalar:
    LinalgScalar
    + Float
    + FromPrimitive
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn cast(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn cast(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    fn cast(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Trainable tensor with its gradient. Biases are `1 x n`.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub value: Array2<T>,
    pub grad: Array2<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Array2<T>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Param { value, grad }
    }
}

/// Mutable access to a named tensor.
pub enum Slot<'a, T> {
    Param(&'a mut Param<T>),
    /// Non-trainable state, e.g. batch-norm running statistics.
    Buffer(&'a mut Array1<T>),
}

/// Anything holding named parameters and buffers.
pub trait Visit<T> {
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, Slot<'_, T>));
}

pub trait Layer<T: Scalar>: Send + Sync {
    fn name(&self) -> &str;
    fn infer(&self, x: Array2<T>) -> Array2<T>;
    fn forward(&mut self, x: Array2<T>) -> Array2<T>;
    fn backward(&mut self, dy: Array2<T>) -> Array2<T>;
    fn visit_mut(&mut self, _f: &mut dyn FnMut(&str, Slot<'_, T>)) {}
}

/// Row-wise softmax in place.
pub fn softmax_rows<T: Scalar>(x: &mut Array2<T>) {
    for mut row in x.rows_mut() {
        let max = row.fold(T::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum: T = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Probabilities below this are clamped inside the logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// Mean categorical cross-entropy of `probs` against `labels`, rows as samples.
pub fn cross_entropy<T: Scalar>(labels: &Array2<T>, probs: &Array2<T>) -> f64 {
    let n = probs.nrows().max(1);
    let total: f64 = labels
        .iter()
        .zip(probs.iter())
        .filter(|(t, _)| **t != T::zero())
        .map(|(&t, &p)| -t.as_f64() * p.as_f64().max(LOG_FLOOR).ln())
        .sum();
    total / n as f64
}

/// Per-row cross-entropy against class indices.
pub fn cross_entropy_rows<T: Scalar>(classes: &[usize], probs: &Array2<T>) -> Vec<f64> {
    classes.iter().zip(probs.rows()).map(|(&c, p)| -p[c].as_f64().max(LOG_FLOOR).ln()).collect()
}

pub(crate) fn glorot<T: Scalar, R: rand::Rng + ?Sized>(
    rng: &mut R,
    shape: (usize, usize),
    fan_in: usize,
    fan_out: usize,
) -> Array2<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn(shape, |_| T::cast(rng.random_range(-limit..limit)))
}

/// Argmax over the first `limit` entries, ties toward the smaller index.
pub fn argmax_prefix<T: PartialOrd + Copy>(v: impl IntoIterator<Item = T>, limit: usize) -> usize {
    let mut best = 0;
    let mut best_val: Option<T> = None;
    for (i, x) in v.into_iter().take(limit).enumerate() {
        if best_val.is_none_or(|b| x > b) {
            best = i;
            best_val = Some(x);
        }
    }
    best
}

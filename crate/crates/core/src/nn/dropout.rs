use ndarray::Array2;
use rand::Rng;

use super::{Layer, Scalar};
use crate::rng::{self, SimRng};

/// Inverted dropout; identity at inference.
pub struct Dropout<T> {
    name: String,
    rate: f64,
    rng: SimRng,
    mask: Option<Array2<T>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(name: impl Into<String>, rate: f64, seed: u64) -> Self {
        Dropout { name: name.into(), rate, rng: rng::seeded(seed), mask: None }
    }
}

impl<T: Scalar> Layer<T> for Dropout<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn infer(&self, x: Array2<T>) -> Array2<T> {
        x
    }

    fn forward(&mut self, mut x: Array2<T>) -> Array2<T> {
        if self.rate == 0.0 {
            return x;
        }
        let keep = T::cast(1.0 / (1.0 - self.rate));
        let rate = self.rate;
        let rng = &mut self.rng;
        let mask = Array2::from_shape_fn(x.raw_dim(), |_| if rng.random::<f64>() < rate { T::zero() } else { keep });
        x *= &mask;
        self.mask = Some(mask);
        x
    }

    fn backward(&mut self, mut dy: Array2<T>) -> Array2<T> {
        if let Some(mask) = self.mask.take() {
            dy *= &mask;
        }
        dy
    }
}

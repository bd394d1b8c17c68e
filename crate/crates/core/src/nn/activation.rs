use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Layer, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "function")]
pub enum ActivationKind {
    Relu,
    LeakyRelu { slope: f64 },
}

/// Elementwise rectifier. Caches its output; for both kinds the output is
/// positive exactly where the input is.
pub struct Activation<T> {
    name: String,
    kind: ActivationKind,
    slope: T,
    out: Option<Array2<T>>,
}

impl<T: Scalar> Activation<T> {
    pub fn new(name: impl Into<String>, kind: ActivationKind) -> Self {
        let slope = match kind {
            ActivationKind::Relu => T::zero(),
            ActivationKind::LeakyRelu { slope } => T::cast(slope),
        };
        Activation { name: name.into(), kind, slope, out: None }
    }

    pub fn kind(&self) -> ActivationKind {
        self.kind
    }

    fn apply(&self, mut x: Array2<T>) -> Array2<T> {
        let s = self.slope;
        x.mapv_inplace(|v| if v > T::zero() { v } else { v * s });
        x
    }
}

impl<T: Scalar> Layer<T> for Activation<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn infer(&self, x: Array2<T>) -> Array2<T> {
        self.apply(x)
    }

    fn forward(&mut self, x: Array2<T>) -> Array2<T> {
        let y = self.apply(x);
        self.out = Some(y.clone());
        y
    }

    fn backward(&mut self, mut dy: Array2<T>) -> Array2<T> {
        let y = self.out.take().expect("backward without forward");
        let s = self.slope;
        dy.zip_mut_with(&y, |d, &o| {
            if o <= T::zero() {
                *d = *d * s;
            }
        });
        dy
    }
}

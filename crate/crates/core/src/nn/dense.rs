use ndarray::{Array2, Axis};
use rand::Rng;

use super::{glorot, Layer, Param, Scalar, Slot};

/// Fully connected layer `y = x W + b`.
pub struct Dense<T> {
    name: String,
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Array2<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new<R: Rng + ?Sized>(name: impl Into<String>, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Dense {
            name: name.into(),
            weight: Param::new(glorot(rng, (inputs, outputs), inputs, outputs)),
            bias: Param::new(Array2::zeros((1, outputs))),
            input: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.ncols()
    }
}

impl<T: Scalar> Layer<T> for Dense<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn infer(&self, x: Array2<T>) -> Array2<T> {
        x.dot(&self.weight.value) + &self.bias.value
    }

    fn forward(&mut self, x: Array2<T>) -> Array2<T> {
        let y = self.infer(x.clone());
        self.input = Some(x);
        y
    }

    fn backward(&mut self, dy: Array2<T>) -> Array2<T> {
        let x = self.input.take().expect("backward without forward");
        self.weight.grad = x.t().dot(&dy);
        self.bias.grad = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        dy.dot(&self.weight.value.t())
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        f(&format!("{}.weight", self.name), Slot::Param(&mut self.weight));
        f(&format!("{}.bias", self.name), Slot::Param(&mut self.bias));
    }
}

//! Serializable layer descriptions and the sequential container built from them.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Activation, ActivationKind, BatchNorm, Conv1xD, Dense, Dropout, Layer, Scalar, Slot};
use crate::error::{Error, Result};
use crate::rng::{self, SimRng};

/// One entry of a network manifest. Feature counts are per row: channels for
/// convolutional stacks, vector width for dense stacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv { name: String, in_channels: usize, out_channels: usize, kernel: usize, width: usize },
    Dense { name: String, inputs: usize, outputs: usize },
    Activation { name: String, activation: ActivationKind, features: usize },
    BatchNorm { name: String, features: usize, momentum: f64, epsilon: f64 },
    Dropout { name: String, rate: f64, features: usize },
}

impl LayerSpec {
    pub fn name(&self) -> &str {
        match self {
            LayerSpec::Conv { name, .. }
            | LayerSpec::Dense { name, .. }
            | LayerSpec::Activation { name, .. }
            | LayerSpec::BatchNorm { name, .. }
            | LayerSpec::Dropout { name, .. } => name,
        }
    }

    pub fn in_features(&self) -> usize {
        match *self {
            LayerSpec::Conv { in_channels, .. } => in_channels,
            LayerSpec::Dense { inputs, .. } => inputs,
            LayerSpec::Activation { features, .. }
            | LayerSpec::BatchNorm { features, .. }
            | LayerSpec::Dropout { features, .. } => features,
        }
    }

    pub fn out_features(&self) -> usize {
        match *self {
            LayerSpec::Conv { out_channels, .. } => out_channels,
            LayerSpec::Dense { outputs, .. } => outputs,
            _ => self.in_features(),
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. })
    }
}

/// Checks that every layer consumes what its predecessor produces.
pub fn validate_chain(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Format("empty layer stack".into()));
    }
    for pair in specs.windows(2) {
        if pair[0].out_features() != pair[1].in_features() {
            return Err(Error::Format(format!(
                "layer {} produces {} features but {} expects {}",
                pair[0].name(),
                pair[0].out_features(),
                pair[1].name(),
                pair[1].in_features()
            )));
        }
    }
    Ok(())
}

/// Layers applied in order.
pub struct Sequential<T> {
    specs: Vec<LayerSpec>,
    layers: Vec<Box<dyn Layer<T>>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn build(specs: Vec<LayerSpec>, rng: &mut SimRng) -> Result<Self> {
        validate_chain(&specs)?;
        let mut layers: Vec<Box<dyn Layer<T>>> = Vec::with_capacity(specs.len());
        for spec in &specs {
            let layer: Box<dyn Layer<T>> = match spec.clone() {
                LayerSpec::Conv { name, in_channels, out_channels, kernel, width } => {
                    Box::new(Conv1xD::new(name, in_channels, out_channels, kernel, width, rng))
                }
                LayerSpec::Dense { name, inputs, outputs } => Box::new(Dense::new(name, inputs, outputs, rng)),
                LayerSpec::Activation { name, activation, .. } => Box::new(Activation::new(name, activation)),
                LayerSpec::BatchNorm { name, features, momentum, epsilon } => {
                    Box::new(BatchNorm::new(name, features, momentum, epsilon))
                }
                LayerSpec::Dropout { name, rate, .. } => {
                    let seed = rand::Rng::random::<u64>(rng);
                    Box::new(Dropout::new(name, rate, rng::derive(seed, 0)))
                }
            };
            layers.push(layer);
        }
        Ok(Sequential { specs, layers })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn in_features(&self) -> usize {
        self.specs[0].in_features()
    }

    pub fn out_features(&self) -> usize {
        self.specs[self.specs.len() - 1].out_features()
    }

    pub fn infer(&self, x: Array2<T>) -> Array2<T> {
        self.layers.iter().fold(x, |x, l| l.infer(x))
    }

    pub fn forward(&mut self, x: Array2<T>) -> Array2<T> {
        self.layers.iter_mut().fold(x, |x, l| l.forward(x))
    }

    pub fn backward(&mut self, dy: Array2<T>) -> Array2<T> {
        self.layers.iter_mut().rev().fold(dy, |d, l| l.backward(d))
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, Slot<'_, T>)) {
        for l in &mut self.layers {
            l.visit_mut(f);
        }
    }
}

/// Dense layer followed by an activation.
pub fn dense_act(name: &str, inputs: usize, outputs: usize, act: Option<ActivationKind>) -> Vec<LayerSpec> {
    let mut v = vec![LayerSpec::Dense { name: name.to_string(), inputs, outputs }];
    if let Some(activation) = act {
        v.push(LayerSpec::Activation { name: format!("{name}.act"), activation, features: outputs });
    }
    v
}

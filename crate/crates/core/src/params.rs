//! Named parameter collections with vector-space arithmetic.
//!
//! Model weights, gradients, momentum buffers and client deltas all share this
//! type. Binary operations require both operands to have identical layouts
//! (same names, same shapes, same order).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ModelParams {
    layers: Vec<NamedTensor>,
}

impl ModelParams {
    pub fn new(layers: Vec<NamedTensor>) -> Self {
        ModelParams { layers }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.layers.push(NamedTensor {
            name: name.into(),
            tensor,
        });
    }

    pub fn layers(&self) -> &[NamedTensor] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [NamedTensor] {
        &mut self.layers
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.layers.iter().find(|l| l.name == name).map(|l| &l.tensor)
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.layers[i].tensor
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.layers[i].tensor
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.layers.iter().map(|l| l.tensor.len()).sum()
    }

    pub fn zeros_like(&self) -> ModelParams {
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|l| NamedTensor {
                    name: l.name.clone(),
                    tensor: Tensor::zeros(l.tensor.shape()),
                })
                .collect(),
        }
    }

    pub fn check_compatible(&self, other: &ModelParams) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::Shape {
                layer: "<params>".into(),
                expected: vec![self.layers.len()],
                got: vec![other.layers.len()],
            });
        }
        for (a, b) in self.layers.iter().zip(&other.layers) {
            if a.name != b.name || a.tensor.shape() != b.tensor.shape() {
                return Err(Error::Shape {
                    layer: a.name.clone(),
                    expected: a.tensor.shape().to_vec(),
                    got: b.tensor.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    fn zip_map(&self, other: &ModelParams, f: impl Fn(f64, f64) -> f64) -> Result<ModelParams> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        for (o, b) in out.layers.iter_mut().zip(&other.layers) {
            for (x, y) in o.tensor.data_mut().iter_mut().zip(b.tensor.data()) {
                *x = f(*x, *y);
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &ModelParams) -> Result<ModelParams> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ModelParams) -> Result<ModelParams> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, factor: f64) -> ModelParams {
        let mut out = self.clone();
        out.scale_in_place(factor);
        out
    }

    pub fn scale_in_place(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.tensor.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &ModelParams) -> Result<()> {
        self.check_compatible(other)?;
        for (o, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in o.tensor.data_mut().iter_mut().zip(b.tensor.data()) {
                *x += alpha * *y;
            }
        }
        Ok(())
    }

    pub fn dot(&self, other: &ModelParams) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self
            .layers
            .iter()
            .zip(&other.layers)
            .flat_map(|(a, b)| a.tensor.data().iter().zip(b.tensor.data()))
            .map(|(x, y)| x * y)
            .sum())
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Iterates over every scalar in layer order.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| l.tensor.data().iter().copied())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.tensor.is_finite())
    }
}

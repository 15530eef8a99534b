use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named, row-major parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: &str, shape: &[usize]) -> Self {
        Self {
            name: name.to_string(),
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(name: &str, shape: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(name, shape);
        t.data.iter_mut().for_each(|v| *v = value);
        t
    }

    /// Uniform in `(-a, a)` with `a = 1 / sqrt(fan_in)`.
    pub fn uniform(name: &str, shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Self {
        let a = 1.0 / (fan_in as f64).sqrt();
        let mut t = Self::zeros(name, shape);
        t.data.iter_mut().for_each(|v| *v = rng.random_range(-a..a));
        t
    }
}

/// Ordered collection of tensors. Gradients and optimizer state reuse the
/// same layout as the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new(tensors: Vec<Tensor>) -> Self {
        Self { tensors }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self.tensors.iter().map(|t| Tensor::zeros(&t.name, &t.shape)).collect(),
        }
    }

    fn index(&self, name: &str) -> usize {
        self.tensors
            .iter()
            .position(|t| t.name == name)
            .unwrap_or_else(|| panic!("no parameter named {name}"))
    }

    pub fn get(&self, name: &str) -> &[f64] {
        &self.tensors[self.index(name)].data
    }

    pub fn get_mut(&mut self, name: &str) -> &mut [f64] {
        let i = self.index(name);
        &mut self.tensors[i].data
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.iter().any(|t| t.name == name)
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.tensors.iter().flat_map(|t| t.data.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.tensors.iter_mut().flat_map(|t| t.data.iter_mut())
    }

    pub fn all_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }

    /// Checks names and shapes against `reference`.
    pub fn check_layout(&self, reference: &ParamSet) -> Result<()> {
        if self.tensors.len() != reference.tensors.len() {
            return Err(Error::Shape(format!(
                "{} tensors, expected {}",
                self.tensors.len(),
                reference.tensors.len()
            )));
        }
        for (a, b) in self.tensors.iter().zip(&reference.tensors) {
            if a.name != b.name || a.shape != b.shape || a.data.len() != b.data.len() {
                return Err(Error::Shape(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    a.name, a.shape, b.name, b.shape
                )));
            }
        }
        Ok(())
    }
}

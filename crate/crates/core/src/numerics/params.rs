use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::scalar::Scalar;

use super::tensor::Tensor;
use super::NumericsError;

/// Named trainable tensors with matching gradient buffers. Iteration order
/// is by name, which keeps optimizer updates and checkpoints deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet<T> {
    values: BTreeMap<String, Tensor<T>>,
    grads: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParameterSet<T> {
    pub fn new() -> Self {
        ParameterSet {
            values: BTreeMap::new(),
            grads: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> Result<(), NumericsError> {
        if self.values.contains_key(name) {
            return Err(NumericsError::DuplicateParameter(name.to_string()));
        }
        self.values.insert(name.to_string(), value);
        Ok(())
    }

    /// Inserts a `rows x cols` tensor with entries drawn from `Normal(0, std)`.
    pub fn insert_normal<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<(), NumericsError> {
        let dist = Normal::new(0.0, std).map_err(|e| NumericsError::Init(e.to_string()))?;
        let data = (0..rows * cols).map(|_| T::lit(dist.sample(rng))).collect();
        self.insert(name, Tensor::matrix(rows, cols, data)?)
    }

    /// Glorot-style init: `Normal(0, sqrt(2 / (rows + cols)))`.
    pub fn insert_glorot<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> Result<(), NumericsError> {
        let std = (2.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::lit(z * std)
            })
            .collect();
        self.insert(name, Tensor::matrix(rows, cols, data)?)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.values.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.values.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.values.contains_key(name)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor<T>> {
        self.grads.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.values().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.grads.clear();
    }

    pub fn has_grads(&self) -> bool {
        !self.grads.is_empty()
    }

    /// Adds `grads` into the gradient buffers.
    pub fn accumulate(&mut self, grads: &Gradients<T>) -> Result<(), NumericsError> {
        for (name, g) in grads.iter() {
            let value = self
                .values
                .get(name)
                .ok_or_else(|| NumericsError::UnknownParameter(name.to_string()))?;
            if !value.same_shape(g) {
                return Err(NumericsError::Shape {
                    op: format!("grad:{name}"),
                    detail: format!(
                        "param {}x{} vs grad {}x{}",
                        value.rows(),
                        value.cols(),
                        g.rows(),
                        g.cols()
                    ),
                });
            }
            match self.grads.get_mut(name) {
                Some(buf) => buf.add_assign(g),
                None => {
                    self.grads.insert(name.to_string(), g.clone());
                }
            }
        }
        Ok(())
    }

    pub(crate) fn values_and_grads_mut(
        &mut self,
    ) -> impl Iterator<Item = (&String, &mut Tensor<T>, Option<&Tensor<T>>)> {
        let grads = &self.grads;
        self.values
            .iter_mut()
            .map(move |(k, v)| (k, v, grads.get(k)))
    }

    /// Copies every value from `other` (same names and shapes).
    pub fn copy_values_from(&mut self, other: &ParameterSet<T>) {
        for (k, v) in &mut self.values {
            if let Some(src) = other.values.get(k) {
                *v = src.clone();
            }
        }
    }
}

/// Parameter gradients produced by one backward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients<T> {
    by_name: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub(crate) fn new(by_name: BTreeMap<String, Tensor<T>>) -> Self {
        Gradients { by_name }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.by_name.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.by_name.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }
}

use std::collections::BTreeMap;

use super::Tensor;
use crate::error::{Error, Result};

/// Named trainable tensors with gradient buffers of matching shape.
///
/// Names iterate in sorted order, which keeps optimizer updates and
/// serialized checkpoints deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: BTreeMap<String, Tensor>,
    grads: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter with a zeroed gradient.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        self.grads
            .insert(name.clone(), Tensor::zeros(value.shape()));
        self.params.insert(name, value);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Lookup(format!("no parameter named {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::Lookup(format!("no parameter named {name:?}")))
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        self.grads
            .get(name)
            .ok_or_else(|| Error::Lookup(format!("no gradient for parameter {name:?}")))
    }

    pub fn grad_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.grads
            .get_mut(name)
            .ok_or_else(|| Error::Lookup(format!("no gradient for parameter {name:?}")))
    }

    /// Adds `delta` into the gradient of `name`.
    pub fn accumulate(&mut self, name: &str, delta: &Tensor) -> Result<()> {
        self.grad_mut(name)?.add_assign(delta)
    }

    /// Replaces the gradient of `name`; the shape must match the parameter.
    pub fn set_grad(&mut self, name: &str, grad: Tensor) -> Result<()> {
        self.get(name)?.check_same_shape(&grad)?;
        self.grads.insert(name.to_string(), grad);
        Ok(())
    }

    pub fn clear_grad(&mut self, name: &str) {
        self.grads.remove(name);
    }

    pub fn zero_grads(&mut self) {
        for (name, p) in &self.params {
            self.grads.insert(name.clone(), Tensor::zeros(p.shape()));
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for g in self.grads.values_mut() {
            g.scale(factor);
        }
    }

    pub(crate) fn split_mut(&mut self) -> (&mut BTreeMap<String, Tensor>, &BTreeMap<String, Tensor>) {
        (&mut self.params, &self.grads)
    }
}

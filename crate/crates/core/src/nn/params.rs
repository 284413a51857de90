use std::collections::HashMap;

use super::{Scalar, Tensor};
use crate::error::{invalid, shape_err, Result};

/// Index of a parameter inside a [`Params`] collection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct Params<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Params<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Registers a tensor under a unique name.
    pub fn register(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return invalid(format!("duplicate parameter name {name}"));
        }
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(id))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    /// Overwrites a parameter's value, keeping its shape.
    pub fn assign(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let Some(id) = self.id(name) else {
            return invalid(format!("unknown parameter {name}"));
        };
        if self.values[id.0].shape() != value.shape() {
            return shape_err(format!(
                "{name}: {:?} vs {:?}",
                self.values[id.0].shape(),
                value.shape()
            ));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.values.iter_mut()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }
}

/// Gradient accumulators, one per parameter, same order and shapes.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(params: &Params<T>) -> Self {
        Self {
            grads: params
                .values
                .iter()
                .map(|v| Tensor::zeros(v.shape()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.grads[id.0]
    }

    pub fn zero(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(T::zero()));
    }

    /// Adds another gradient set (same layout) into this one.
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .map(|g| g.sum_sq().as_f64())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: T) {
        self.grads.iter_mut().for_each(|g| g.scale(s));
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.grads.iter()
    }
}

/// Parameters together with their gradient accumulators.
#[derive(Clone, Debug)]
pub struct ParameterStore<T> {
    pub params: Params<T>,
    pub grads: Gradients<T>,
}

impl<T: Scalar> ParameterStore<T> {
    pub fn new(params: Params<T>) -> Self {
        let grads = Gradients::zeros_like(&params);
        Self { params, grads }
    }

    pub fn zero_grad(&mut self) {
        self.grads.zero();
    }

    /// Split borrow for backward passes: read parameters, write gradients.
    pub fn split(&mut self) -> (&Params<T>, &mut Gradients<T>) {
        (&self.params, &mut self.grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut p = Params::<f32>::new();
        p.register("a", Tensor::zeros(&[2])).unwrap();
        assert!(p.register("a", Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn gradients_mirror_parameter_shapes() {
        let mut p = Params::<f64>::new();
        p.register("w", Tensor::zeros(&[3, 4])).unwrap();
        p.register("b", Tensor::zeros(&[4])).unwrap();
        let store = ParameterStore::new(p);
        for ((_, _, v), g) in store.params.iter().zip(store.grads.iter()) {
            assert_eq!(v.shape(), g.shape());
        }
    }
}

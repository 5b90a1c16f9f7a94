use indexmap::IndexMap;

use super::graph::Graph;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A named trainable tensor with its gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Frozen parameters are bound as constants and skipped by optimisers.
    pub frozen: bool,
}

/// Insertion-ordered collection of uniquely named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: IndexMap<String, Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register `name`. Names are unique within a store.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter name `{name}`")));
        }
        let grad = Tensor::zeros(value.shape());
        self.params.insert(
            name.clone(),
            Parameter {
                name,
                value,
                grad,
                frozen: false,
            },
        );
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.get_index_of(name)
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.get_mut(name)
    }

    pub(crate) fn get_index(&self, idx: usize) -> &Parameter {
        &self.params[idx]
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        if p.value.shape() != value.shape() {
            return Err(Error::Shape {
                op: "set_value",
                left: p.value.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.values_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Zero and freeze every parameter whose name starts with `prefix`.
    /// Returns how many were affected.
    pub fn zero_and_freeze(&mut self, prefix: &str) -> usize {
        let mut n = 0;
        for p in self.params.values_mut().filter(|p| p.name.starts_with(prefix)) {
            p.value.fill(0.0);
            p.grad.fill(0.0);
            p.frozen = true;
            n += 1;
        }
        n
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(0.0);
        }
    }

    /// Add the parameter gradients recorded on `graph` into the grad buffers.
    pub fn accumulate(&mut self, graph: &Graph) {
        for (idx, g) in graph.param_grads() {
            self.params[idx].grad.add_assign(g);
        }
    }

    /// Add an extracted gradient set into the grad buffers.
    pub fn accumulate_grads(&mut self, grads: &Gradients) {
        for (p, g) in self.params.values_mut().zip(&grads.0) {
            p.grad.add_assign(g);
        }
    }

    /// Extract the gradients recorded on `graph` as a standalone set aligned
    /// with this store, so examples can be differentiated on other threads.
    pub fn gradients_of(&self, graph: &Graph) -> Gradients {
        let mut out: Vec<Tensor> = self.params.values().map(|p| Tensor::zeros(p.value.shape())).collect();
        for (idx, g) in graph.param_grads() {
            out[idx].add_assign(g);
        }
        Gradients(out)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }
}

/// Per-parameter gradients aligned with a [`ParamStore`]'s order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<Tensor>);

impl Gradients {
    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::zeros(&[2])).unwrap();
        assert!(s.insert("a", Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut s = ParamStore::new();
        s.insert("enc.w", Tensor::ones(&[2])).unwrap();
        s.insert("coh.w", Tensor::ones(&[2])).unwrap();
        assert_eq!(s.zero_and_freeze("coh."), 1);
        let mut g = Graph::new();
        let a = g.param(&s, "enc.w").unwrap();
        let b = g.param(&s, "coh.w").unwrap();
        let c = g.add(a, b).unwrap();
        let l = g.sum(c);
        g.backward(l).unwrap();
        s.accumulate(&g);
        assert_eq!(s.get("enc.w").unwrap().grad.data(), &[1.0, 1.0]);
        assert_eq!(s.get("coh.w").unwrap().grad.data(), &[0.0, 0.0]);
        assert_eq!(s.get("coh.w").unwrap().value.data(), &[0.0, 0.0]);
    }
}

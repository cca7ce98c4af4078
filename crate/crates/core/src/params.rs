use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::real::Real;
use crate::tensor::Tensor;

/// A named trainable tensor. Names are dotted paths such as
/// `encoder_diff.block0.token_fc1.weight`.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T = f32> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Ordered, uniquely named parameter collection.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f32> {
    params: Vec<Parameter<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Real> Default for ModelParams<T> {
    fn default() -> Self {
        ModelParams {
            params: Vec::new(),
            index: BTreeMap::new(),
        }
    }
}

impl<T: Real> ModelParams<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Internal(format!("duplicate parameter name `{name}`")));
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Parameter { name, value });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    /// Mutable access to the values, in order. Names stay fixed.
    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.params.iter_mut().map(|p| &mut p.value)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.params[i].value)
    }

    /// Replaces a value; the new tensor must keep the old shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))?;
        if self.params[i].value.shape() != value.shape() {
            return Err(Error::shape("set", format!("parameter `{name}`"), &[self.params[i].value.shape(), value.shape()]));
        }
        self.params[i].value = value;
        Ok(())
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Converts every value to another precision, keeping names and order.
    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    pub fn checksum(&self) -> u64 {
        self.params.iter().fold(0u64, |acc, p| {
            acc.rotate_left(7) ^ p.value.checksum() ^ (p.name.len() as u64)
        })
    }

    /// Records every parameter on `graph`, trainable or frozen.
    pub fn bind(&self, graph: &mut Graph<T>, trainable: bool) -> BoundParams {
        let vars = self
            .params
            .iter()
            .map(|p| graph.leaf(p.value.clone(), trainable))
            .collect();
        BoundParams {
            vars,
            index: self.index.clone(),
        }
    }

    /// Binds to vars already on `graph`, one per parameter in order.
    pub fn bind_existing(&self, graph: &Graph<T>, vars: &[Var]) -> Result<BoundParams> {
        if vars.len() != self.params.len() {
            return Err(Error::Internal(format!(
                "{} vars for {} parameters",
                vars.len(),
                self.params.len()
            )));
        }
        for (p, &v) in self.params.iter().zip(vars) {
            if graph.shape(v) != p.value.shape() {
                return Err(Error::shape(
                    "bind_existing",
                    format!("`{}`", p.name),
                    &[graph.shape(v), p.value.shape()],
                ));
            }
        }
        Ok(BoundParams {
            vars: vars.to_vec(),
            index: self.index.clone(),
        })
    }
}

/// Graph handles for a [`ModelParams`], in the same order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
    index: BTreeMap<String, usize>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::Internal(format!("unknown parameter `{name}`")))
    }

    /// Gradients in parameter order; `None` where a parameter was unused.
    pub fn collect<T: Real>(&self, grads: &mut Gradients<T>) -> Vec<Option<Vec<T>>> {
        self.vars.iter().map(|&v| grads.take(v)).collect()
    }
}

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::{Graph, Scalar, Tensor, Var};

/// Ordered, uniquely named collection of learnable tensors.
#[derive(Clone, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name '{name}'")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Records every tensor as a gradient-carrying leaf of `g`.
    pub fn bind(&self, g: &mut Graph<T>) -> BoundParams<'_, T> {
        let vars = self.entries.iter().map(|(_, t)| g.param(t.clone())).collect();
        BoundParams { store: self, vars }
    }

    /// Records every tensor as a constant leaf (inference, no gradients).
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> BoundParams<'_, T> {
        let vars = self.entries.iter().map(|(_, t)| g.constant(t.clone())).collect();
        BoundParams { store: self, vars }
    }

    /// Converts every entry to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let entries = self
            .entries
            .iter()
            .map(|(n, t)| {
                let data = t.data().iter().map(|v| U::lit(v.as_f64())).collect();
                (n.clone(), Tensor::from_parts(t.shape().clone(), data))
            })
            .collect();
        ParamStore {
            entries,
            index: self.index.clone(),
        }
    }
}

impl<T: Scalar> std::fmt::Debug for ParamStore<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_map()
            .entries(self.entries.iter().map(|(n, t)| (n, t.shape())))
            .finish()
    }
}

/// Graph leaves for a [`ParamStore`], looked up by parameter name.
pub struct BoundParams<'a, T> {
    store: &'a ParamStore<T>,
    vars: Vec<Var>,
}

impl<T: Scalar> BoundParams<'_, T> {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.store
            .index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::Contract(format!("missing parameter '{name}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.store.names().zip(self.vars.iter().copied())
    }

    /// Gradients after `backward`, keyed like the store (zeros where none flowed).
    pub fn grads(&self, g: &Graph<T>) -> Vec<(String, Tensor<T>)> {
        self.iter()
            .map(|(name, v)| (name.to_string(), g.grad_tensor(v)))
            .collect()
    }
}

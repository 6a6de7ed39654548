use std::collections::BTreeMap;

use musegnn_autodiff::{Tape, Var};
use ndarray::Array2;

use crate::{CoreError, Result};

/// Named parameter tensors. Shared layers are stored once under a single
/// name, so every dataset that resolves to that name reads the same tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.tensors.values().map(Array2::len).sum()
    }
}

/// Lazily places parameters on a tape, once per name.
pub struct Binder<'a> {
    store: &'a ParamStore,
    vars: BTreeMap<String, Var>,
}

impl<'a> Binder<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            vars: BTreeMap::new(),
        }
    }

    /// Pre-bind `name` to an existing tape variable.
    pub fn insert(&mut self, name: impl Into<String>, var: Var) {
        self.vars.insert(name.into(), var);
    }

    pub fn get(&mut self, tape: &mut Tape, name: &str) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let value = self
            .store
            .get(name)
            .ok_or_else(|| CoreError::Config(format!("unknown parameter {name}")))?;
        let v = tape.param(value.clone())?;
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    /// Every parameter bound so far, by name.
    pub fn bound(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }
}

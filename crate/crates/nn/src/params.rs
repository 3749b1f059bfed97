//! Named parameter storage shared by every model.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{arg_err, shape_err, NnError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Running statistics and power-iteration vectors, updated by forward passes.
    Buffer,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub tensor: Arc<Tensor>,
    pub kind: ParamKind,
}

/// Ordered map from unique path names (`block.0.conv.weight`) to tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: BTreeMap<String, Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, kind: ParamKind) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return arg_err("params", format!("duplicate parameter `{name}`"));
        }
        self.entries.insert(
            name,
            Param {
                tensor: Arc::new(tensor),
                kind,
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.entries
            .get(name)
            .ok_or_else(|| NnError::UnknownParameter(name.to_string()))
    }

    pub fn tensor(&self, name: &str) -> Result<Arc<Tensor>> {
        Ok(self.get(name)?.tensor.clone())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Replaces a value, keeping its kind; the shape must not change.
    pub fn set(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| NnError::UnknownParameter(name.to_string()))?;
        if p.tensor.shape() != tensor.shape() {
            return shape_err(
                "params",
                format!("`{name}` is {:?}, got {:?}", p.tensor.shape(), tensor.shape()),
            );
        }
        p.tensor = Arc::new(tensor);
        Ok(())
    }

    pub fn apply(&mut self, updates: BTreeMap<String, Tensor>) -> Result<()> {
        for (name, t) in updates {
            self.set(&name, t)?;
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn trainable_names(&self) -> impl Iterator<Item = &String> {
        self.entries
            .iter()
            .filter(|(_, p)| p.kind == ParamKind::Trainable)
            .map(|(n, _)| n)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .values()
            .filter(|p| p.kind == ParamKind::Trainable)
            .map(|p| p.tensor.numel())
            .sum()
    }

    /// Plain copy of every value, buffers included.
    pub fn to_map(&self) -> BTreeMap<String, Tensor> {
        self.entries
            .iter()
            .map(|(n, p)| (n.clone(), p.tensor.as_ref().clone()))
            .collect()
    }

    /// Overwrites every entry from `values`, which must carry exactly the
    /// same names and shapes.
    pub fn load_map(&mut self, values: BTreeMap<String, Tensor>) -> Result<()> {
        if let Some(missing) = self.entries.keys().find(|k| !values.contains_key(*k)) {
            return Err(NnError::Format(format!("missing entry `{missing}`")));
        }
        if let Some(extra) = values.keys().find(|k| !self.entries.contains_key(*k)) {
            return Err(NnError::UnknownParameter(extra.clone()));
        }
        self.apply(values)
    }
}

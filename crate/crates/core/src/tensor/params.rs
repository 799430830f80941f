use std::collections::HashMap;

use super::{Real, Tensor};
use crate::error::{CnmError, Result};

/// Handle into a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named trainable tensors in registration order. The order is the
/// checkpoint order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F = f32> {
    names: Vec<String>,
    values: Vec<Tensor<F>>,
    index: HashMap<String, usize>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// Overwrite values from `(name, tensor)` pairs. Every stored name must be
    /// present with an identical shape.
    pub fn assign_from<'a>(
        &mut self,
        entries: impl IntoIterator<Item = (&'a str, &'a Tensor<F>)>,
    ) -> Result<()> {
        let mut seen = vec![false; self.len()];
        for (name, t) in entries {
            let id = self
                .id(name)
                .ok_or_else(|| CnmError::format(format!("tensor {name}"), "unknown parameter"))?;
            if self.values[id.0].shape() != t.shape() {
                return Err(CnmError::format(
                    format!("tensor {name}"),
                    format!(
                        "shape {:?} does not match model shape {:?}",
                        t.shape(),
                        self.values[id.0].shape()
                    ),
                ));
            }
            self.values[id.0] = t.clone();
            seen[id.0] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(CnmError::format(
                format!("tensor {}", self.names[missing]),
                "missing from checkpoint",
            ));
        }
        Ok(())
    }
}

use super::graph::{Graph, Var};
use super::tensor::{Real, Tensor};
use crate::error::{PunError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
///
/// Insertion order is the serialization order, so two models built the same
/// way produce byte-identical checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    frozen: Vec<bool>,
}

impl<T: Real> Default for Params<T> {
    fn default() -> Self {
        Params {
            names: Vec::new(),
            tensors: Vec::new(),
            frozen: Vec::new(),
        }
    }
}

impl<T: Real> Params<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(t);
        self.frozen.push(false);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.frozen[id.0] = frozen;
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.frozen[id.0]
    }

    /// Replace a tensor by name, keeping the declared shape.
    pub fn assign(&mut self, name: &str, t: Tensor<T>) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| PunError::Lookup(format!("no parameter named {name}")))?;
        if self.tensors[id.0].shape() != t.shape() {
            return Err(PunError::shape(
                "assign",
                self.tensors[id.0].shape(),
                t.shape(),
            ));
        }
        self.tensors[id.0] = t;
        Ok(())
    }

    /// Puts every parameter on the tape. Frozen ones enter as constants.
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.tensors
            .iter()
            .zip(&self.frozen)
            .map(|(t, &frozen)| {
                if frozen {
                    g.constant(t.clone())
                } else {
                    g.param(t.clone())
                }
            })
            .collect()
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            frozen: self.frozen.clone(),
        }
    }

    pub fn zeros_like(&self) -> Vec<Tensor<T>> {
        self.tensors
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect()
    }
}

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::Gradients;
use super::{NnError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

/// Owns every named parameter of a model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    names: Vec<String>,
    by_name: HashMap<String, ParamId>,
}

pub const INIT_BOUND: f64 = 0.08;
pub const EMBEDDING_INIT_BOUND: f64 = 0.1;

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.params.len());
        self.params.push(Parameter {
            grad: Tensor::zeros(value.shape()),
            value,
            trainable: true,
        });
        self.names.push(name.to_string());
        self.by_name.insert(name.to_string(), id);
        id
    }

    /// Weight matrix initialized uniformly in ±0.08.
    pub fn add_uniform(&mut self, name: &str, shape: &[usize], rng: &mut impl Rng) -> ParamId {
        self.add(name, Tensor::uniform(shape, INIT_BOUND, rng))
    }

    pub fn add_embedding(&mut self, name: &str, rows: usize, dim: usize, rng: &mut impl Rng) -> ParamId {
        self.add(name, Tensor::uniform(&[rows, dim], EMBEDDING_INIT_BOUND, rng))
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    pub fn num_weights(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Adds tape gradients into the stored gradients of trainable parameters.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in grads.params() {
            let p = &mut self.params[id.0];
            if p.trainable {
                p.grad.add_assign(g);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.grad.sum_sq())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for p in self.params.iter_mut().filter(|p| p.trainable) {
                p.grad.data_mut().iter_mut().for_each(|g| *g *= scale);
            }
        }
        norm
    }

    /// Multiplies all gradients by `factor` (e.g. 1/batch).
    pub fn scale_grads(&mut self, factor: f64) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn to_checkpoint(&self, metadata: BTreeMap<String, serde_json::Value>) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            metadata,
            tensors: self
                .params
                .iter()
                .zip(&self.names)
                .map(|(p, name)| NamedTensor {
                    name: name.clone(),
                    shape: p.value.shape().to_vec(),
                    trainable: p.trainable,
                    data: p.value.data().to_vec(),
                })
                .collect(),
        }
    }

    /// Copies values from a checkpoint into this store. Every parameter must
    /// be present with a matching shape.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<(), NnError> {
        let by_name: HashMap<&str, &NamedTensor> =
            ckpt.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        for (i, name) in self.names.iter().enumerate() {
            let t = by_name
                .get(name.as_str())
                .ok_or_else(|| NnError::Checkpoint(format!("missing tensor `{name}`")))?;
            let p = &mut self.params[i];
            if t.shape != p.value.shape() {
                return Err(NnError::ShapeMismatch {
                    op: "load_checkpoint",
                    left: p.value.shape().to_vec(),
                    right: t.shape.clone(),
                });
            }
            p.value = Tensor::new(t.shape.clone(), t.data.clone())?;
            p.trainable = t.trainable;
        }
        Ok(())
    }
}

pub const CHECKPOINT_FORMAT: &str = "kpcnet-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub data: Vec<f64>,
}

/// Versioned JSON container of named tensors plus free-form metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub metadata: BTreeMap<String, serde_json::Value>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let text = serde_json::to_string(self).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text)
            .map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(NnError::Checkpoint(format!(
                "unexpected format `{}`",
                ckpt.format
            )));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported version {}",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    pub fn meta<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T, NnError> {
        let v = self
            .metadata
            .get(key)
            .ok_or_else(|| NnError::Checkpoint(format!("missing metadata `{key}`")))?;
        serde_json::from_value(v.clone()).map_err(|e| NnError::Checkpoint(format!("{key}: {e}")))
    }
}

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "priorshift-params";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors plus their gradient buffers.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::contract(format!("duplicate parameter name {name}")));
        }
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        self.names.push(name);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.data_mut().fill(0.0);
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &[f64]) {
        for (t, v) in self.grads[id.0].data_mut().iter_mut().zip(g) {
            *t += v;
        }
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            params: self
                .names
                .iter()
                .cloned()
                .zip(self.values.iter().cloned())
                .collect(),
        };
        Ok(serde_json::to_string(&ckpt)?)
    }

    /// Overwrites the values of every parameter named in `json`. All names
    /// and shapes must match this store exactly.
    pub fn load_json(&mut self, json: &str) -> Result<()> {
        let ckpt: Checkpoint = serde_json::from_str(json)?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::config(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        if ckpt.params.len() != self.len() {
            return Err(Error::config(format!(
                "checkpoint has {} parameters, model has {}",
                ckpt.params.len(),
                self.len()
            )));
        }
        for (name, tensor) in ckpt.params {
            let id = self
                .find(&name)
                .ok_or_else(|| Error::config(format!("unknown parameter {name}")))?;
            // Deserialization bypasses Tensor::new, so re-validate.
            let tensor = Tensor::new(tensor.shape().to_vec(), tensor.into_data())?;
            if tensor.shape() != self.values[id.0].shape() {
                return Err(Error::config(format!(
                    "parameter {name}: shape {:?} vs {:?}",
                    tensor.shape(),
                    self.values[id.0].shape()
                )));
            }
            self.values[id.0] = tensor;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.load_json(&json)
    }
}

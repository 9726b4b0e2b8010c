//! Versioned JSON checkpoints:
//! `{"version":1,"config":{"network":..,"run":..},"tensors":[{"name","shape","values"}]}`
//! with row-major values.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{GrGcn, NetworkConfig};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub network: NetworkConfig,
    #[serde(default)]
    pub run: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: CheckpointConfig,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn from_model(model: &GrGcn, run: serde_json::Value) -> Self {
        let tensors = model
            .params
            .named_tensors()
            .into_iter()
            .chain(model.buffers.named_tensors())
            .map(|(name, m)| TensorRecord { name, shape: [m.rows(), m.cols()], values: m.as_slice().to_vec() })
            .collect();
        Self {
            version: CHECKPOINT_VERSION,
            config: CheckpointConfig { network: model.config().clone(), run },
            tensors,
        }
    }

    /// Rebuilds the model, requiring exactly the tensors the config implies.
    pub fn to_model(&self) -> Result<GrGcn> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidModel(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let mut model = GrGcn::zeroed(self.config.network.clone())?;
        let mut by_name: BTreeMap<&str, &TensorRecord> = BTreeMap::new();
        for t in &self.tensors {
            if by_name.insert(t.name.as_str(), t).is_some() {
                return Err(Error::InvalidModel(format!("duplicate tensor {}", t.name)));
            }
        }
        let names: Vec<String> = model
            .params
            .named_tensors()
            .into_iter()
            .chain(model.buffers.named_tensors())
            .map(|(n, _)| n)
            .collect();
        let targets = model.params.tensors_mut().into_iter().chain(model.buffers.tensors_mut());
        for (name, target) in names.iter().zip(targets) {
            let rec = by_name
                .remove(name.as_str())
                .ok_or_else(|| Error::InvalidModel(format!("checkpoint is missing tensor {name}")))?;
            if rec.shape != [target.rows(), target.cols()] {
                return Err(Error::InvalidModel(format!(
                    "tensor {name} has shape {:?}, config implies {:?}",
                    rec.shape,
                    target.shape()
                )));
            }
            *target = Matrix::new(rec.shape[0], rec.shape[1], rec.values.clone())
                .map_err(|e| Error::InvalidModel(format!("tensor {name}: {e}")))?;
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::InvalidModel(format!("unexpected tensor {extra}")));
        }
        Ok(model)
    }
}

pub fn save_checkpoint(model: &GrGcn, run: serde_json::Value, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string(&Checkpoint::from_model(model, run))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidModel(format!("{}: {e}", path.display())))
}

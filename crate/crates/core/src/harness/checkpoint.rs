use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AccentModel, ModelConfig};
use crate::numerics::Matrix;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CHECKPOINT_FORMAT: &str = "lasas-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// On-disk checkpoint: the architecture plus every named parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub model: ModelConfig,
    pub feat_dim: usize,
    pub text_dim: usize,
    pub params: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn from_model(model: &AccentModel, seed: u64) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            seed,
            model: model.config().clone(),
            feat_dim: model.feat_dim(),
            text_dim: model.text_dim(),
            params: model
                .params()
                .iter()
                .map(|p| TensorRecord {
                    name: p.name.clone(),
                    rows: p.value.rows(),
                    cols: p.value.cols(),
                    data: p.value.data().to_vec(),
                })
                .collect(),
        }
    }

    /// Rebuilds the model and overwrites its parameters by name.
    pub fn into_model(self) -> Result<AccentModel> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Invalid(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let mut model = AccentModel::new(self.model, self.feat_dim, self.text_dim, 0)?;
        if model.params().len() != self.params.len() {
            return Err(Error::Invalid(format!(
                "checkpoint holds {} tensors, model has {}",
                self.params.len(),
                model.params().len()
            )));
        }
        for rec in self.params {
            let id = model
                .params()
                .find(&rec.name)
                .ok_or_else(|| Error::Invalid(format!("unknown parameter `{}`", rec.name)))?;
            let value = Matrix::from_vec(rec.rows, rec.cols, rec.data)?;
            let slot = &mut model.params_mut().get_mut(id).value;
            if slot.shape() != value.shape() {
                return Err(Error::shape("checkpoint tensor", slot.shape(), value.shape()));
            }
            *slot = value;
        }
        Ok(model)
    }
}

pub fn save_checkpoint(model: &AccentModel, seed: u64, path: &Path) -> Result<()> {
    let text = serde_json::to_string(&Checkpoint::from_model(model, seed)).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(AccentModel, u64)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    let seed = ckpt.seed;
    Ok((ckpt.into_model()?, seed))
}

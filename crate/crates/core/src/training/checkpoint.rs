use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Adam, TrainConfig, TrainError};
use crate::grad::Tensor;
use crate::model::{Cerberus, EncoderConfig, ParamStore};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Model weights plus optimizer state, stored as JSON with exact floats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub params: ParamStore,
    pub optimizer: Adam,
}

impl Checkpoint {
    pub fn new(model: &Cerberus, optimizer: &Adam, train: &TrainConfig) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            encoder: model.config().clone(),
            train: train.clone(),
            params: model.params().clone(),
            optimizer: optimizer.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| TrainError::io(dir, e))?;
        }
        let text = serde_json::to_string(self).map_err(|e| TrainError::io(path, e))?;
        std::fs::write(path, text).map_err(|e| TrainError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| TrainError::io(path, e))?;
        let found = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != CHECKPOINT_VERSION {
            return Err(TrainError::Version {
                found,
                expected: CHECKPOINT_VERSION,
            });
        }
        let ck: Checkpoint = serde_json::from_value(value).map_err(|e| TrainError::io(path, e))?;
        for (name, t) in ck.params.entries() {
            Tensor::new(t.shape().to_vec(), t.data().to_vec())
                .map_err(|e| TrainError::io(path, format!("{name}: {e}")))?;
        }
        Ok(ck)
    }

    /// Rebuild the model; shapes are checked against the encoder layout.
    pub fn model(&self) -> Result<Cerberus, TrainError> {
        let model = Cerberus::from_params(self.encoder.clone(), self.params.clone())?;
        self.optimizer.check_matches(model.params())?;
        Ok(model)
    }
}

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ReconModel};
use crate::error::{ReconError, Result};
use crate::nn::{Adam, ParamSet};

pub const CHECKPOINT_SCHEMA: &str = "cinerecon.checkpoint/v1";

/// Named parameters with the model config embedded, plus optional
/// optimizer and free-form training state for resuming.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema: String,
    pub model: ModelConfig,
    pub params: ParamSet,
    #[serde(default)]
    pub optimizer: Option<Adam>,
    #[serde(default)]
    pub state: serde_json::Value,
}

impl Checkpoint {
    pub fn new(model: &ReconModel) -> Self {
        Checkpoint {
            schema: CHECKPOINT_SCHEMA.to_string(),
            model: model.config().clone(),
            params: model.params().clone(),
            optimizer: None,
            state: serde_json::Value::Null,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text =
            serde_json::to_string(self).map_err(|e| ReconError::Checkpoint(e.to_string()))?;
        fs::write(path, text).map_err(|e| ReconError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| ReconError::io(path, e))?;
        let raw: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| ReconError::Checkpoint(format!("{}: {e}", path.display())))?;
        match raw.get("schema").and_then(|s| s.as_str()) {
            Some(CHECKPOINT_SCHEMA) => {}
            Some(other) => {
                return Err(ReconError::Checkpoint(format!(
                    "{}: unsupported schema '{other}', expected '{CHECKPOINT_SCHEMA}'",
                    path.display()
                )))
            }
            None => {
                return Err(ReconError::Checkpoint(format!(
                    "{}: missing schema id",
                    path.display()
                )))
            }
        }
        serde_json::from_value(raw)
            .map_err(|e| ReconError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn into_model(self) -> Result<ReconModel> {
        ReconModel::from_parts(self.model, self.params)
    }
}

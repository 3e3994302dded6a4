use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::InitRecord;
use super::{DetectorConfig, DetectorModel, LossBreakdown, Params};
use crate::error::{Error, Result};
use crate::ood::GaussianModel;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized trained detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub config: DetectorConfig,
    pub params: Params,
    pub init: InitRecord,
    /// Gaussian fitted to the final feature bank, if it was large enough.
    pub gaussian: Option<GaussianModel>,
    /// SHA-256 of every image used for training.
    pub training_images: Vec<String>,
    /// Mean losses per epoch.
    pub history: Vec<LossBreakdown>,
}

impl Checkpoint {
    pub fn new(model: &DetectorModel) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            params: model.params.clone(),
            init: model.init.clone(),
            gaussian: None,
            training_images: Vec::new(),
            history: Vec::new(),
        }
    }

    pub fn model(&self) -> Result<DetectorModel> {
        self.config.validate()?;
        let expected = Params::zeros(&self.config);
        let shapes_match = expected
            .blocks()
            .iter()
            .zip(self.params.blocks())
            .all(|((_, a), (_, b))| a.len() == b.len())
            && expected.convs.len() == self.params.convs.len();
        if !shapes_match {
            return Err(Error::Config("checkpoint parameters do not match its config".to_string()));
        }
        Ok(DetectorModel {
            config: self.config.clone(),
            params: self.params.clone(),
            init: self.init.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let found = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found,
                expected: CHECKPOINT_VERSION,
            });
        }
        Ok(serde_json::from_value(value)?)
    }
}

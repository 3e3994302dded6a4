//! Convolutional real-vs-adversarial detector with a max-pooling
//! classification head.
//!
//! The backbone is four stride-2 3x3 convolutions with ReLU and replicate
//! padding, producing an `N x N x d` feature map (`N = input_side / 16`). Every
//! cell is scored by a shared linear head; the image is classified by its most
//! adversarial cell. Class 0 is adversarial, class 1 is real.
//!
//! A second linear head and a small MLP score spatially pooled features for the
//! out-of-distribution regularizer (see [`crate::ood`]).

mod checkpoint;
mod grad;
mod model;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use grad::{backward, total_loss, BatchLoss};
pub use model::{
    cross_entropy, forward, mpc_select, predict, softmax2, ConvLayer, DetectorModel, FeatureMap,
    Params, PredictionScore, ADV, REAL,
};
pub use train::{Adam, LossBreakdown, Trainer};
pub use model::InitRecord;

pub(crate) use model::logsumexp2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ood::OodConfig;

/// How the per-cell logits are pooled into the image logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MpcPooling {
    /// Take the whole logit pair of the cell with the largest adv-minus-real
    /// margin.
    Margin,
    /// Max-pool each class logit independently.
    PerClassMax,
}

/// What the OOD MLP receives as input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OodScoreInput {
    /// Negative energy: `logsumexp` of the two OOD-head logits.
    NegEnergy,
    /// Negated first OOD-head logit, a scalar linear map of the feature.
    NegLinear,
}

/// Fixed, parameter-free transform applied to the image before the first
/// convolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InputStem {
    /// Pixel values as they are.
    Raw,
    /// `gain * (x - box3(x))` per channel, with replicate borders.
    HighPass { gain: f64 },
}

impl Default for InputStem {
    fn default() -> Self {
        InputStem::HighPass { gain: 8.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    /// Input height and width; a multiple of 16.
    pub input_side: usize,
    pub stem: InputStem,
    /// Output channels of the four convolution blocks. The last one is the
    /// embedding size `d`.
    pub channels: [usize; 4],
    pub mlp_hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Weight of the uncertainty loss.
    pub beta: f64,
    pub pooling: MpcPooling,
    pub ood_input: OodScoreInput,
    pub ood: OodConfig,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            input_side: 64,
            stem: InputStem::default(),
            channels: [8, 16, 32, 32],
            mlp_hidden: 16,
            learning_rate: 1e-3,
            batch_size: 8,
            epochs: 5,
            beta: 0.1,
            pooling: MpcPooling::Margin,
            ood_input: OodScoreInput::NegEnergy,
            ood: OodConfig::default(),
            seed: 0,
        }
    }
}

impl DetectorConfig {
    pub fn embed_dim(&self) -> usize {
        self.channels[3]
    }

    pub fn grid(&self) -> usize {
        self.input_side / 16
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_side == 0 || self.input_side % 16 != 0 {
            return Err(Error::Config(format!(
                "input side {} is not a positive multiple of 16",
                self.input_side
            )));
        }
        if self.grid() < 2 {
            return Err(Error::Config("feature grid must be at least 2x2".to_string()));
        }
        if self.embed_dim() < 2 || self.channels.contains(&0) {
            return Err(Error::Config("channel widths must be positive and d >= 2".to_string()));
        }
        if self.mlp_hidden == 0 || self.batch_size == 0 {
            return Err(Error::Config("mlp width and batch size must be positive".to_string()));
        }
        if !(self.learning_rate > 0.0) || !(self.beta >= 0.0) {
            return Err(Error::Config("learning rate must be positive and beta >= 0".to_string()));
        }
        self.ood.validate()
    }
}

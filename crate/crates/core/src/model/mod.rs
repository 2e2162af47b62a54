//! The cascaded segmentation network: configuration, construction,
//! training, prediction, and the descriptor-count sweep experiment.

mod network;
mod sweep;
mod train;

pub use network::{CascadedModel, ModelOutputs};
pub use sweep::{build_samples, evaluate_test_set, run_sweep, write_sweep_csv, SweepRow};
pub use train::{
    evaluate_loss, joint_loss, make_sample, train, write_history_csv, EpochStats, LabeledSet,
    TrainHistory, TrainSample,
};

use thiserror::Error;

use crate::autodiff::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("config error: {0}")]
    ConfigError(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Architecture hyperparameters. `descriptor_order` is the number of
/// regression decoders; 0 drops the regression stage entirely, leaving a
/// single classification U-Net on the raw image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub num_classes: usize,
    pub descriptor_order: usize,
    pub input_height: usize,
    pub input_width: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            base_channels: 32,
            num_classes: 2,
            descriptor_order: 1,
            input_height: 256,
            input_width: 512,
        }
    }
}

impl NetworkConfig {
    /// Small configuration for desk-scale experiments and tests.
    pub fn desk() -> Self {
        Self {
            depth: 3,
            base_channels: 16,
            input_height: 64,
            input_width: 128,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let div = 1usize << self.depth;
        if self.depth == 0 {
            return Err(ModelError::ConfigError("depth must be at least 1".into()));
        }
        if self.base_channels == 0 {
            return Err(ModelError::ConfigError("base_channels must be at least 1".into()));
        }
        if self.num_classes < 2 {
            return Err(ModelError::ConfigError("num_classes must be at least 2".into()));
        }
        if self.input_height % div != 0 || self.input_width % div != 0 {
            return Err(ModelError::ConfigError(format!(
                "input {}x{} not divisible by 2^depth = {div}",
                self.input_height, self.input_width
            )));
        }
        Ok(())
    }
}

/// Training protocol parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub regression_loss_weight: f64,
    pub classification_loss_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 1,
            early_stop_patience: 50,
            max_epochs: 500,
            regression_loss_weight: 1.0,
            classification_loss_weight: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.batch_size == 0 {
            return Err(ModelError::ConfigError("batch_size must be at least 1".into()));
        }
        if self.early_stop_patience == 0 {
            return Err(ModelError::ConfigError("early_stop_patience must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(ModelError::ConfigError("max_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Parse a `key = value` text config covering both structs; `#` starts a
/// comment. Unknown keys are rejected.
pub fn parse_config(text: &str) -> Result<(NetworkConfig, TrainConfig), ModelError> {
    let mut net = NetworkConfig::default();
    let mut tc = TrainConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ModelError::ConfigError(format!(
                "line {}: expected key = value, got '{raw}'",
                lineno + 1
            )));
        };
        let key = key.trim();
        let value = value.trim();
        let bad = |e: &dyn std::fmt::Display| {
            ModelError::ConfigError(format!("line {}: bad value for {key}: {e}", lineno + 1))
        };
        match key {
            "depth" => net.depth = value.parse().map_err(|e| bad(&e))?,
            "base_channels" => net.base_channels = value.parse().map_err(|e| bad(&e))?,
            "num_classes" => net.num_classes = value.parse().map_err(|e| bad(&e))?,
            "descriptor_order" => net.descriptor_order = value.parse().map_err(|e| bad(&e))?,
            "input_height" => net.input_height = value.parse().map_err(|e| bad(&e))?,
            "input_width" => net.input_width = value.parse().map_err(|e| bad(&e))?,
            "batch_size" => tc.batch_size = value.parse().map_err(|e| bad(&e))?,
            "early_stop_patience" => tc.early_stop_patience = value.parse().map_err(|e| bad(&e))?,
            "max_epochs" => tc.max_epochs = value.parse().map_err(|e| bad(&e))?,
            "regression_loss_weight" => {
                tc.regression_loss_weight = value.parse().map_err(|e| bad(&e))?
            }
            "classification_loss_weight" => {
                tc.classification_loss_weight = value.parse().map_err(|e| bad(&e))?
            }
            "seed" => tc.seed = value.parse().map_err(|e| bad(&e))?,
            other => {
                return Err(ModelError::ConfigError(format!(
                    "line {}: unknown key '{other}'",
                    lineno + 1
                )))
            }
        }
    }
    net.validate()?;
    tc.validate()?;
    Ok((net, tc))
}

/// Render a config pair back to the text format.
pub fn format_config(net: &NetworkConfig, tc: &TrainConfig) -> String {
    format!(
        "depth = {}\nbase_channels = {}\nnum_classes = {}\ndescriptor_order = {}\n\
         input_height = {}\ninput_width = {}\nbatch_size = {}\nearly_stop_patience = {}\n\
         max_epochs = {}\nregression_loss_weight = {}\nclassification_loss_weight = {}\nseed = {}\n",
        net.depth,
        net.base_channels,
        net.num_classes,
        net.descriptor_order,
        net.input_height,
        net.input_width,
        tc.batch_size,
        tc.early_stop_patience,
        tc.max_epochs,
        tc.regression_loss_weight,
        tc.classification_loss_weight,
        tc.seed
    )
}

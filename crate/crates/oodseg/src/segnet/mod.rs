//! Small 3D encoder-decoder segmentation network with hand-rolled
//! reverse-mode autodiff: Dice-loss training with ADAM, per-layer feature
//! capture for the OOD detectors, MC-dropout scoring and FGSM attacks.
//!
//! Blocks are conv -> instance norm -> ReLU -> channel dropout; levels
//! are joined by 2x average pooling down and trilinear upsampling up,
//! with skip concatenations in the decoder (unless the `NoSkip` variant
//! is selected). The classification head is a 1x1x1 convolution.

mod adam;
mod checkpoint;
mod infer;
mod loss;
mod net;
mod ops;
mod scalar;
mod train;

pub use adam::{adam_step, AdamState, TrainConfig};
pub use checkpoint::{checkpoint_fingerprint, load_checkpoint, save_checkpoint};
pub use infer::{fgsm_attack, mc_dropout_score, predict_mask};
pub use loss::dice_loss;
pub use net::{
    backward, build_net, forward, BackwardResult, ConvParam, ConvShape, Gradients, HeadGrads,
    NetParams,
};
pub use scalar::Scalar;
pub use train::{train, EpochStats, TrainLog};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};
use crate::volumes::VolumeError;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("input extents {got:?} not compatible with {levels} levels")]
    ExtentMismatch { got: Vec<usize>, levels: usize },
    #[error("mask label {value} out of range for {classes} classes")]
    LabelOutOfRange { value: f64, classes: usize },
    #[error("mask shape {mask:?} does not match logits {logits:?}")]
    ShapeMismatch {
        mask: Vec<usize>,
        logits: Vec<usize>,
    },
    #[error("mc_dropout_score needs n >= 2, got {0}")]
    McSamples(usize),
    #[error("epsilon must be non-negative, got {0}")]
    NegativeEpsilon(f64),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),
    #[error("checkpoint fingerprint mismatch: stored {stored}, recomputed {computed}")]
    FingerprintMismatch { stored: String, computed: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("checkpoint json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Architecture family knob for the sensitivity experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Plain,
    NoSkip,
    Wide,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Output channels per level, shallow to deep.
    pub channels: Vec<usize>,
    /// Encoder depth; spatial extents halve per level.
    pub levels: usize,
    /// Convolution kernel extent (only 3 is supported).
    pub kernel: usize,
    pub dropout_rate: f64,
    pub norm_eps: f64,
    pub classes: usize,
    pub variant: Variant,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            channels: vec![8, 16, 32],
            levels: 3,
            kernel: 3,
            dropout_rate: 0.2,
            norm_eps: 1e-5,
            classes: 2,
            variant: Variant::Plain,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.levels == 0 {
            return Err(NetError::InvalidConfig("levels must be >= 1".into()));
        }
        if self.channels.len() != self.levels {
            return Err(NetError::InvalidConfig(format!(
                "channels length {} must equal levels {}",
                self.channels.len(),
                self.levels
            )));
        }
        if self.channels.iter().any(|&c| c == 0) {
            return Err(NetError::InvalidConfig("channel counts must be positive".into()));
        }
        if self.kernel != 3 {
            return Err(NetError::InvalidConfig(format!(
                "kernel {} unsupported; only 3 is implemented",
                self.kernel
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(NetError::InvalidConfig(format!(
                "dropout_rate {} must lie in [0, 1)",
                self.dropout_rate
            )));
        }
        if self.classes < 2 {
            return Err(NetError::InvalidConfig("classes must be >= 2".into()));
        }
        if self.norm_eps <= 0.0 {
            return Err(NetError::InvalidConfig("norm_eps must be positive".into()));
        }
        Ok(())
    }

    /// Per-level channels after applying the variant.
    pub fn effective_channels(&self) -> Vec<usize> {
        match self.variant {
            Variant::Wide => self.channels.iter().map(|c| c * 2).collect(),
            _ => self.channels.clone(),
        }
    }

    /// Check that a volume shape survives `levels - 1` halvings.
    pub fn check_extents(&self, shape: &[usize]) -> Result<(), NetError> {
        let div = 1usize << (self.levels - 1);
        let ok = shape.len() == 3
            && shape
                .iter()
                .all(|&e| e % div == 0 && e / div >= 2);
        if ok {
            Ok(())
        } else {
            Err(NetError::ExtentMismatch {
                got: shape.to_vec(),
                levels: self.levels,
            })
        }
    }
}

/// Layer kinds recorded in the execution registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Norm,
    Act,
    Dropout,
    Down,
    Up,
    Concat,
    Head,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub id: String,
    pub kind: LayerKind,
    pub out_channels: usize,
}

/// Execution-ordered layer registry. Conv layer ids drive all
/// feature-based detectors; the encoder end (deepest conv) and the
/// penultimate conv (last conv before the head) are singled out for the
/// single-layer methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    pub entries: Vec<LayerEntry>,
    pub encoder_end: String,
    pub penultimate: String,
}

impl Registry {
    pub fn conv_ids(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.kind == LayerKind::Conv)
            .map(|e| e.id.as_str())
            .collect()
    }

    pub fn conv_channels(&self, id: &str) -> Option<usize> {
        self.entries
            .iter()
            .find(|e| e.kind == LayerKind::Conv && e.id == id)
            .map(|e| e.out_channels)
    }
}

/// Ordered map from conv layer id to its captured post-activation map
/// (channels x H x W x D).
#[derive(Debug, Clone)]
pub struct FeatureStack {
    entries: Vec<(String, Tensor)>,
}

impl FeatureStack {
    pub fn new(entries: Vec<(String, Tensor)>) -> FeatureStack {
        FeatureStack { entries }
    }

    pub fn empty() -> FeatureStack {
        FeatureStack {
            entries: Vec::new(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(k, _)| k == id).map(|(_, t)| t)
    }

    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|(k, _)| k.as_str()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, t)| (k.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

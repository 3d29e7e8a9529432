//! Quadruplet training: encode four views, mix one shape latent, render the
//! own- and cross-view reconstructions, step Adam.

mod adam;
mod checkpoint;
mod trainer;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetError;
use crate::grad::GradError;
use crate::losses::{LossError, LossWeights};
use crate::model::ModelError;

pub use adam::{clip_global_norm, global_norm, Adam};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use trainer::{
    load_quadruplets, LossComponents, QuadSample, StepReport, Trainer, LOSS_CSV_HEADER,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite gradient in {param} at element {index}")]
    NonFinite { param: String, index: usize },
    #[error("record {record}: {source}")]
    Record {
        record: usize,
        #[source]
        source: LossError,
    },
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grad(#[from] GradError),
}

impl TrainError {
    pub(crate) fn io(path: impl Into<PathBuf>, e: impl std::fmt::Display) -> Self {
        Self::Io {
            path: path.into(),
            message: e.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub steps: u64,
    pub weights: LossWeights,
    pub seed: u64,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
    /// Share one mixed shape latent across the quadruplet. Off trains the
    /// free ablation, where each view keeps its own latent.
    pub pose_consistency: bool,
    pub clip_norm: f64,
}

impl TrainConfig {
    /// CPU-sized defaults.
    pub fn desk() -> Self {
        Self {
            lr: 0.0005,
            batch: 4,
            steps: 2000,
            weights: LossWeights::default(),
            seed: 0,
            checkpoint_every: 500,
            pose_consistency: true,
            clip_norm: 10.0,
        }
    }

    pub fn paper() -> Self {
        Self {
            batch: 16,
            steps: 100_000,
            checkpoint_every: 5000,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.steps == 0 || self.batch == 0 {
            return bad("steps and batch size must be at least 1".into());
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip norm must be positive, got {}", self.clip_norm));
        }
        self.weights.validate().map_err(TrainError::Config)
    }
}

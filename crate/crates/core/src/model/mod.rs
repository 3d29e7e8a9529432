//! The part-based encoder: an hourglass network whose bottleneck yields an
//! object latent, a shape latent and per-part quaternions, and whose
//! full-resolution head yields per-part probability and depth maps.

mod config;
mod network;
mod params;
mod partset;
mod translation;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Camera, GeometryError, Quaternion, Vec3};
use crate::grad::{GradError, Tensor};

pub use config::EncoderConfig;
pub use network::{Cerberus, LatentVars};
pub use params::{BoundParams, ParamStore};
pub use partset::{Part, PartSet};
pub use translation::{pixel_grids, translations_on_tape, UnprojectOp};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("parameter mismatch: {0}")]
    Params(String),
    #[error("image shape {got:?}, expected {expected:?}")]
    ImageSize { expected: Vec<usize>, got: Vec<usize> },
    #[error("shape latent width {got}, expected {expected}")]
    LatentWidth { expected: usize, got: usize },
    #[error("part {index} out of range for {parts} parts")]
    PartIndex { index: usize, parts: usize },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Encoder outputs for one image, as plain values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentBundle {
    pub object_latent: Vec<f64>,
    pub shape_latent: Vec<f64>,
    /// Unit quaternions, camera-relative.
    pub quaternions: Vec<Quaternion>,
    /// `[N, H, W]`
    pub prob_maps: Tensor,
    /// `[N, H, W]`
    pub depth_maps: Tensor,
}

impl LatentBundle {
    pub fn parts(&self) -> usize {
        self.quaternions.len()
    }
}

/// World translation of part `k`: expected pixel center and depth under
/// the part's probability map, unprojected through `camera`.
pub fn retrieve_translation(bundle: &LatentBundle, camera: &Camera, k: usize) -> Result<Vec3, ModelError> {
    if k >= bundle.parts() {
        return Err(ModelError::PartIndex {
            index: k,
            parts: bundle.parts(),
        });
    }
    Ok(translation::retrieve_translation_maps(
        &bundle.prob_maps,
        &bundle.depth_maps,
        camera,
        k,
    ))
}

#[cfg(test)]
mod tests;

//! Procedural articulated figures: subjects, poses, viewpoints, rendered
//! quadruplets and held-out test samples.

mod capsule;
mod generate;
mod manifest;
mod skeleton;

use std::path::PathBuf;

use thiserror::Error;

use crate::geometry::GeometryError;
use crate::render::RenderError;

pub use capsule::{capsule, MERIDIANS, PARALLELS};
pub use generate::{
    azimuth_separation, generate_dataset, render_sample, DatasetConfig, GeneratedDataset,
};
pub use manifest::{
    CameraSpec, CanonicalEntry, LoadedView, Manifest, PoseEntry, QuadRecord, QuadViewEntries,
    SubjectEntry, TestSample, ViewEntry, MANIFEST_NAME, MANIFEST_VERSION, RUN_RECORD_NAME,
};
pub use skeleton::{
    joint_rotation, make_subject, sample_pose, Pose, PosedFigure, SegmentRange, Segment, Skeleton,
    SubjectRanges,
};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid skeleton: {0}")]
    Skeleton(String),
    #[error("invalid pose: {0}")]
    Pose(String),
    #[error("invalid dataset config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl DatasetError {
    pub(crate) fn io(path: impl Into<PathBuf>, e: impl std::fmt::Display) -> Self {
        Self::Io {
            path: path.into(),
            message: e.to_string(),
        }
    }
}

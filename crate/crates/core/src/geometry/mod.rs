//! Meshes, icospheres, rotations, the pinhole camera and dihedral angles.

mod camera;
mod dihedral;
mod icosphere;
mod mesh;
pub mod obj;
mod rotation;
pub mod vec3;

use thiserror::Error;

pub use camera::{Camera, CameraFrame, Z_NEAR};
pub use dihedral::{dihedral_angles, edge_wings, EdgeWing};
pub use icosphere::{icosphere, MAX_LEVEL};
pub use mesh::TriangleMesh;
pub use rotation::{quat_to_matrix, Quaternion, RigidTransform};
pub use vec3::{Mat3, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("face {face} references vertex {index}, mesh has {vertex_count}")]
    FaceIndex {
        face: usize,
        index: usize,
        vertex_count: usize,
    },
    #[error("expected {expected} per-vertex entries, got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("zero quaternion has no rotation")]
    ZeroQuaternion,
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("point is behind the near plane (camera depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("unprojection needs positive depth, got {0}")]
    NonPositiveDepth(f64),
    #[error("edge ({a}, {b}) is shared by {faces} faces, expected 2")]
    NonManifoldEdge { a: usize, b: usize, faces: usize },
    #[error("icosphere level {level} exceeds the limit of {max}")]
    LevelTooLarge { level: u32, max: u32 },
    #[error("obj: {0}")]
    Obj(String),
}

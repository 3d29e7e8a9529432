use serde::{Deserialize, Serialize};

use crate::geometry::{vec3, Mat3, TriangleMesh, Vec3};

/// One placed part: a deformed local mesh, a world rotation and a
/// translation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Part {
    pub mesh: TriangleMesh,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Part {
    pub fn world_mesh(&self) -> TriangleMesh {
        self.mesh
            .map_vertices(|v| vec3::add(vec3::mat_vec(&self.rotation, v), self.translation))
    }
}

/// The parts of one reconstructed object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartSet {
    parts: Vec<Part>,
}

impl PartSet {
    pub fn new(parts: Vec<Part>) -> Self {
        Self { parts }
    }

    pub fn parts(&self) -> &[Part] {
        &self.parts
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn translations(&self) -> Vec<Vec3> {
        self.parts.iter().map(|p| p.translation).collect()
    }

    pub fn world_meshes(&self) -> Vec<TriangleMesh> {
        self.parts.iter().map(Part::world_mesh).collect()
    }
}

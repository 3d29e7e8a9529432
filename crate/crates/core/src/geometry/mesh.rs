use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::vec3::{self, Vec3};
use super::{GeometryError, RigidTransform};

/// Vertex positions plus counter-clockwise (outward-facing) index triples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
}

/// Undirected edge key with the smaller index first.
pub(crate) fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self, GeometryError> {
        let n = vertices.len();
        if let Some((face, &idx)) = faces
            .iter()
            .enumerate()
            .find_map(|(i, f)| f.iter().find(|&&v| v >= n).map(|v| (i, v)))
        {
            return Err(GeometryError::FaceIndex {
                face,
                index: idx,
                vertex_count: n,
            });
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Same connectivity, new positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self, GeometryError> {
        if vertices.len() != self.vertices.len() {
            return Err(GeometryError::CountMismatch {
                expected: self.vertices.len(),
                got: vertices.len(),
            });
        }
        Ok(Self {
            vertices,
            faces: self.faces.clone(),
        })
    }

    /// Faces incident to each undirected edge, ordered by edge.
    pub fn edge_faces(&self) -> BTreeMap<(usize, usize), Vec<usize>> {
        let mut map: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (fi, f) in self.faces.iter().enumerate() {
            for k in 0..3 {
                map.entry(edge_key(f[k], f[(k + 1) % 3])).or_default().push(fi);
            }
        }
        map
    }

    pub fn edge_count(&self) -> usize {
        self.edge_faces().len()
    }

    /// `V − E + F`.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_count() as i64 + self.faces.len() as i64
    }

    /// First edge not shared by exactly two faces, if any.
    pub fn non_manifold_edge(&self) -> Option<((usize, usize), usize)> {
        self.edge_faces()
            .into_iter()
            .find(|(_, f)| f.len() != 2)
            .map(|(e, f)| (e, f.len()))
    }

    pub fn is_closed_manifold(&self) -> bool {
        self.non_manifold_edge().is_none()
    }

    pub fn centroid(&self) -> Vec3 {
        let n = self.vertices.len().max(1) as f64;
        let s = self
            .vertices
            .iter()
            .fold([0.0; 3], |acc, v| vec3::add(acc, *v));
        vec3::scale(s, 1.0 / n)
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    /// Enclosed volume by the divergence theorem (signed; positive for
    /// outward orientation).
    pub fn volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| self.vertices[i]);
                vec3::dot(a, vec3::cross(b, c)) / 6.0
            })
            .sum()
    }

    /// `vertices[i] + displacements[i]`; connectivity unchanged.
    pub fn deform(&self, displacements: &[Vec3]) -> Result<Self, GeometryError> {
        if displacements.len() != self.vertices.len() {
            return Err(GeometryError::CountMismatch {
                expected: self.vertices.len(),
                got: displacements.len(),
            });
        }
        let vertices = self
            .vertices
            .iter()
            .zip(displacements)
            .map(|(v, d)| vec3::add(*v, *d))
            .collect();
        self.with_vertices(vertices)
    }

    /// `v ↦ R·v + T`.
    pub fn transformed(&self, t: &RigidTransform) -> Result<Self, GeometryError> {
        let r = t.rotation.to_matrix()?;
        Ok(self.map_vertices(|v| vec3::add(vec3::mat_vec(&r, v), t.translation)))
    }

    pub fn map_vertices(&self, f: impl Fn(Vec3) -> Vec3) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| f(*v)).collect(),
            faces: self.faces.clone(),
        }
    }

    /// Disjoint union; indices of `other` are shifted past ours.
    pub fn merged(meshes: &[TriangleMesh]) -> Self {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for m in meshes {
            let base = vertices.len();
            vertices.extend_from_slice(&m.vertices);
            faces.extend(m.faces.iter().map(|f| f.map(|i| i + base)));
        }
        Self { vertices, faces }
    }

    /// Axis-aligned box with outward CCW faces (12 triangles).
    pub fn cuboid(min: Vec3, max: Vec3) -> Self {
        let v = |x: usize, y: usize, z: usize| {
            [
                if x == 0 { min[0] } else { max[0] },
                if y == 0 { min[1] } else { max[1] },
                if z == 0 { min[2] } else { max[2] },
            ]
        };
        let vertices = vec![
            v(0, 0, 0),
            v(1, 0, 0),
            v(1, 1, 0),
            v(0, 1, 0),
            v(0, 0, 1),
            v(1, 0, 1),
            v(1, 1, 1),
            v(0, 1, 1),
        ];
        let faces = vec![
            [0, 2, 1],
            [0, 3, 2],
            [4, 5, 6],
            [4, 6, 7],
            [0, 1, 5],
            [0, 5, 4],
            [1, 2, 6],
            [1, 6, 5],
            [2, 3, 7],
            [2, 7, 6],
            [3, 0, 4],
            [3, 4, 7],
        ];
        Self { vertices, faces }
    }
}

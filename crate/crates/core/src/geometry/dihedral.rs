use std::f64::consts::PI;

use super::mesh::TriangleMesh;
use super::vec3::{self, Vec3};
use super::GeometryError;

/// An interior edge with its two incident faces and the vertex of each face
/// opposite the edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EdgeWing {
    pub a: usize,
    pub b: usize,
    /// Opposite vertex in the face where the edge runs `a → b`.
    pub left: usize,
    /// Opposite vertex in the other face.
    pub right: usize,
}

/// Wings of every edge, in edge order. Fails on the first edge not shared
/// by exactly two faces.
pub fn edge_wings(mesh: &TriangleMesh) -> Result<Vec<EdgeWing>, GeometryError> {
    let faces = mesh.faces();
    let mut wings = Vec::new();
    for ((a, b), incident) in mesh.edge_faces() {
        if incident.len() != 2 {
            return Err(GeometryError::NonManifoldEdge {
                a,
                b,
                faces: incident.len(),
            });
        }
        let opposite = |f: [usize; 3]| f.into_iter().find(|&v| v != a && v != b).unwrap();
        let runs_forward = |f: [usize; 3]| (0..3).any(|k| f[k] == a && f[(k + 1) % 3] == b);
        let (f0, f1) = (faces[incident[0]], faces[incident[1]]);
        let (left, right) = if runs_forward(f0) {
            (opposite(f0), opposite(f1))
        } else {
            (opposite(f1), opposite(f0))
        };
        wings.push(EdgeWing { a, b, left, right });
    }
    Ok(wings)
}

/// Outward unit normal of triangle `(p, q, r)` (counter-clockwise).
pub(crate) fn face_normal(p: Vec3, q: Vec3, r: Vec3) -> Vec3 {
    vec3::normalize(vec3::cross(vec3::sub(q, p), vec3::sub(r, p)))
}

impl EdgeWing {
    /// Normals of the face on the left (`a, b, left`) and right (`b, a, right`).
    pub fn normals(&self, v: &[Vec3]) -> (Vec3, Vec3) {
        (
            face_normal(v[self.a], v[self.b], v[self.left]),
            face_normal(v[self.b], v[self.a], v[self.right]),
        )
    }
}

/// Interior dihedral angle at every edge, in `(0, 2π)`: π for coplanar
/// faces, below π for convex edges, above π for concave ones.
pub fn dihedral_angles(mesh: &TriangleMesh) -> Result<Vec<f64>, GeometryError> {
    let v = mesh.vertices();
    Ok(edge_wings(mesh)?
        .iter()
        .map(|w| {
            let (n1, n2) = w.normals(v);
            let bend = vec3::norm(vec3::cross(n1, n2)).atan2(vec3::dot(n1, n2));
            let convex = vec3::dot(vec3::sub(v[w.right], v[w.a]), n1) <= 0.0;
            if convex {
                PI - bend
            } else {
                PI + bend
            }
        })
        .collect())
}

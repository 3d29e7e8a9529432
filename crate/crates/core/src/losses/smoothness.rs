//! Dihedral smoothness energy `Σ (cos θ + 1)²` over all interior edges.
//!
//! With unit face normals `n1, n2` across an edge, the interior angle
//! satisfies `cos θ = −n1·n2` for convex and concave edges alike, so each
//! edge contributes `(1 − n1·n2)²`.

use std::any::Any;
use std::rc::Rc;

use crate::geometry::vec3::{self, Vec3};
use crate::geometry::{edge_wings, EdgeWing, GeometryError, TriangleMesh};
use crate::grad::{CustomOp, GradError, Saved, Tensor};

fn unit_normal(p: Vec3, q: Vec3, r: Vec3) -> (Vec3, Vec3, Vec3, f64) {
    let e1 = vec3::sub(q, p);
    let e2 = vec3::sub(r, p);
    let cr = vec3::cross(e1, e2);
    let len = vec3::norm(cr);
    (vec3::scale(cr, 1.0 / len), e1, e2, len)
}

fn wing_faces(w: &EdgeWing) -> [[usize; 3]; 2] {
    [[w.a, w.b, w.left], [w.b, w.a, w.right]]
}

/// Energy of vertex positions under a fixed edge structure.
pub fn smoothness_energy(points: &[Vec3], wings: &[EdgeWing]) -> f64 {
    wings
        .iter()
        .map(|w| {
            let [f1, f2] = wing_faces(w);
            let (n1, ..) = unit_normal(points[f1[0]], points[f1[1]], points[f1[2]]);
            let (n2, ..) = unit_normal(points[f2[0]], points[f2[1]], points[f2[2]]);
            (1.0 - vec3::dot(n1, n2)).powi(2)
        })
        .sum()
}

fn smoothness_gradient(points: &[Vec3], wings: &[EdgeWing], scale: f64) -> Vec<Vec3> {
    let mut grad = vec![[0.0; 3]; points.len()];
    for w in wings {
        let faces = wing_faces(w);
        let geo = faces.map(|f| unit_normal(points[f[0]], points[f[1]], points[f[2]]));
        let (n1, n2) = (geo[0].0, geo[1].0);
        let c = -2.0 * (1.0 - vec3::dot(n1, n2)) * scale;
        let g_normals = [vec3::scale(n2, c), vec3::scale(n1, c)];
        for ((f, (n, e1, e2, len)), g_n) in faces.iter().zip(geo).zip(g_normals) {
            let g_cr = vec3::scale(vec3::sub(g_n, vec3::scale(n, vec3::dot(n, g_n))), 1.0 / len);
            let g_e1 = vec3::cross(e2, g_cr);
            let g_e2 = vec3::cross(g_cr, e1);
            grad[f[1]] = vec3::add(grad[f[1]], g_e1);
            grad[f[2]] = vec3::add(grad[f[2]], g_e2);
            grad[f[0]] = vec3::sub(grad[f[0]], vec3::add(g_e1, g_e2));
        }
    }
    grad
}

/// Smoothness summed over all meshes.
pub fn smoothness_loss(meshes: &[TriangleMesh]) -> Result<f64, GeometryError> {
    let mut total = 0.0;
    for m in meshes {
        total += smoothness_energy(m.vertices(), &edge_wings(m)?);
    }
    Ok(total)
}

/// Tape op over stacked vertices `[M, 3]` (or any `[..., 3]`) → scalar.
/// `wings` index the stacked vertex array.
pub struct SmoothnessOp {
    wings: Rc<Vec<EdgeWing>>,
}

impl SmoothnessOp {
    pub fn new(wings: Rc<Vec<EdgeWing>>) -> Self {
        Self { wings }
    }

    /// Wings of `copies` stacked copies of `mesh`.
    pub fn stacked(mesh: &TriangleMesh, copies: usize) -> Result<Self, GeometryError> {
        let base = edge_wings(mesh)?;
        let nv = mesh.vertex_count();
        let wings = (0..copies)
            .flat_map(|k| {
                let o = k * nv;
                base.iter().map(move |w| EdgeWing {
                    a: w.a + o,
                    b: w.b + o,
                    left: w.left + o,
                    right: w.right + o,
                })
            })
            .collect();
        Ok(Self::new(Rc::new(wings)))
    }
}

fn as_points(t: &Tensor) -> Vec<Vec3> {
    t.data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

impl CustomOp for SmoothnessOp {
    fn name(&self) -> &str {
        "smoothness"
    }

    fn arity(&self) -> usize {
        1
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Saved), GradError> {
        let t = inputs[0];
        if t.shape().last() != Some(&3) {
            return Err(GradError::Shape {
                op: "smoothness",
                detail: format!("expected [..., 3], got {:?}", t.shape()),
            });
        }
        let points = as_points(t);
        if let Some(bad) = self
            .wings
            .iter()
            .flat_map(|w| [w.a, w.b, w.left, w.right])
            .find(|&i| i >= points.len())
        {
            return Err(GradError::Shape {
                op: "smoothness",
                detail: format!("edge references vertex {bad} of {}", points.len()),
            });
        }
        Ok((Tensor::scalar(smoothness_energy(&points, &self.wings)), Box::new(())))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        _saved: &dyn Any,
        grad_output: &Tensor,
    ) -> Result<Vec<Option<Tensor>>, GradError> {
        let points = as_points(inputs[0]);
        let grad = smoothness_gradient(&points, &self.wings, grad_output.item());
        let flat = grad.into_iter().flatten().collect();
        Ok(vec![Some(Tensor::new(inputs[0].shape().to_vec(), flat)?)])
    }
}

//! Differentiable flat-shaded rasterizer.
//!
//! [`rasterize`] renders a list of world-space meshes. [`RasterOp`] wraps the
//! same code as a tape op over a `[V, 3]` vertex tensor producing a
//! `[4, H, W]` tensor (rgb planes then silhouette). Depth is available from
//! the plain entry points only.

pub mod image;
mod raster;

use std::any::Any;
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{vec3, Camera, GeometryError, TriangleMesh, Vec3, Z_NEAR};
use crate::grad::{CustomOp, GradError, Saved, Tensor};
use crate::model::PartSet;

pub use raster::{rasterize_points, RasterState, RenderOutput};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("image has zero area")]
    EmptyImage,
    #[error("mesh {0} has no faces")]
    EmptyMesh(usize),
    #[error("face references missing vertex {0}")]
    FaceIndex(usize),
    #[error("{albedo} albedo entries for {faces} faces")]
    AlbedoCount { faces: usize, albedo: usize },
    #[error("upstream gradient has {got} entries, expected {expected}")]
    GradientShape { expected: usize, got: usize },
    #[error("invalid lights: {0}")]
    Lights(String),
    #[error("{expected} parts but {got} override translations")]
    OverrideCount { expected: usize, got: usize },
    #[error("part {part} sits behind the near plane (camera depth {depth})")]
    BehindCamera { part: usize, depth: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("image io: {0}")]
    Image(String),
}

impl From<RenderError> for GradError {
    fn from(e: RenderError) -> Self {
        GradError::Custom(format!("render: {e}"))
    }
}

/// White directional light along the view direction plus white ambient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightRig {
    pub directional: f64,
    pub ambient: f64,
}

impl Default for LightRig {
    fn default() -> Self {
        Self {
            directional: 0.7,
            ambient: 0.3,
        }
    }
}

impl LightRig {
    pub fn validate(&self) -> Result<(), RenderError> {
        let ok = (0.0..=1.0).contains(&self.directional)
            && (0.0..=1.0).contains(&self.ambient)
            && self.directional + self.ambient <= 1.0 + 1e-12;
        if ok {
            Ok(())
        } else {
            Err(RenderError::Lights(format!(
                "k_dir {} and k_amb {} must lie in [0, 1] with sum at most 1",
                self.directional, self.ambient
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    /// Width in pixels of the soft silhouette band outside each triangle.
    pub sigma_edge: f64,
    pub albedo: f64,
    pub background: [f64; 3],
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            sigma_edge: 1.5,
            albedo: 0.75,
            background: [0.0; 3],
        }
    }
}

fn concat_meshes(meshes: &[TriangleMesh]) -> Result<(Vec<Vec3>, Vec<[usize; 3]>), RenderError> {
    let mut points = Vec::new();
    let mut faces = Vec::new();
    for (i, m) in meshes.iter().enumerate() {
        if m.face_count() == 0 {
            return Err(RenderError::EmptyMesh(i));
        }
        let base = points.len();
        points.extend_from_slice(m.vertices());
        faces.extend(m.faces().iter().map(|f| f.map(|v| v + base)));
    }
    Ok((points, faces))
}

/// Render world-space meshes. Earlier meshes win depth ties.
pub fn rasterize(
    meshes: &[TriangleMesh],
    camera: &Camera,
    lights: &LightRig,
    settings: &RenderSettings,
) -> Result<RenderOutput, RenderError> {
    let (points, faces) = concat_meshes(meshes)?;
    Ok(rasterize_points(&points, &faces, camera, lights, settings, None)?.0)
}

/// Like [`rasterize`] with one flat albedo color per mesh (visualization only).
pub fn rasterize_colored(
    meshes: &[TriangleMesh],
    colors: &[[f64; 3]],
    camera: &Camera,
    lights: &LightRig,
    settings: &RenderSettings,
) -> Result<RenderOutput, RenderError> {
    if colors.len() != meshes.len() {
        return Err(RenderError::AlbedoCount {
            faces: meshes.len(),
            albedo: colors.len(),
        });
    }
    let (points, faces) = concat_meshes(meshes)?;
    let albedo: Vec<[f64; 3]> = meshes
        .iter()
        .zip(colors)
        .flat_map(|(m, c)| std::iter::repeat_n(*c, m.face_count()))
        .collect();
    Ok(rasterize_points(&points, &faces, camera, lights, settings, Some(&albedo))?.0)
}

/// World-space part meshes, optionally with every translation replaced.
/// Fails if any part's translation is not in front of the near plane.
pub fn place_parts(
    parts: &PartSet,
    camera: &Camera,
    translations_override: Option<&[Vec3]>,
) -> Result<Vec<TriangleMesh>, RenderError> {
    if let Some(t) = translations_override {
        if t.len() != parts.len() {
            return Err(RenderError::OverrideCount {
                expected: parts.len(),
                got: t.len(),
            });
        }
    }
    parts
        .parts()
        .iter()
        .enumerate()
        .map(|(k, part)| {
            let t = translations_override.map_or(part.translation, |o| o[k]);
            let depth = camera.to_camera(t)[2];
            if !(depth > Z_NEAR) {
                return Err(RenderError::BehindCamera { part: k, depth });
            }
            Ok(part
                .mesh
                .map_vertices(|v| vec3::add(vec3::mat_vec(&part.rotation, v), t)))
        })
        .collect()
}

pub fn render_parts(
    parts: &PartSet,
    camera: &Camera,
    translations_override: Option<&[Vec3]>,
    lights: &LightRig,
    settings: &RenderSettings,
) -> Result<RenderOutput, RenderError> {
    rasterize(&place_parts(parts, camera, translations_override)?, camera, lights, settings)
}

/// Tape op: world vertices `[V, 3]` → `[4, H, W]` (r, g, b, silhouette).
pub struct RasterOp {
    faces: Rc<Vec<[usize; 3]>>,
    camera: Camera,
    lights: LightRig,
    settings: RenderSettings,
}

impl RasterOp {
    pub fn new(
        faces: Rc<Vec<[usize; 3]>>,
        camera: Camera,
        lights: LightRig,
        settings: RenderSettings,
    ) -> Self {
        Self {
            faces,
            camera,
            lights,
            settings,
        }
    }
}

impl CustomOp for RasterOp {
    fn name(&self) -> &str {
        "rasterize"
    }

    fn arity(&self) -> usize {
        1
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Saved), GradError> {
        let v = inputs[0];
        if v.ndim() != 2 || v.shape()[1] != 3 {
            return Err(GradError::Shape {
                op: "rasterize",
                detail: format!("vertices must be [V, 3], got {:?}", v.shape()),
            });
        }
        let points: Vec<Vec3> = v.data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let (out, state) = rasterize_points(
            &points,
            &self.faces,
            &self.camera,
            &self.lights,
            &self.settings,
            None,
        )?;
        let mut data = out.rgb;
        data.extend_from_slice(&out.silhouette);
        let t = Tensor::new(vec![4, out.height, out.width], data)?;
        Ok((t, Box::new(state)))
    }

    fn backward(
        &self,
        _inputs: &[&Tensor],
        _output: &Tensor,
        saved: &dyn Any,
        grad_output: &Tensor,
    ) -> Result<Vec<Option<Tensor>>, GradError> {
        let state = saved
            .downcast_ref::<RasterState>()
            .ok_or_else(|| GradError::Custom("rasterize: missing forward state".into()))?;
        let plane = state.width() * state.height();
        let g = grad_output.data();
        let grads = state.backward(&g[..3 * plane], &g[3 * plane..])?;
        let n = grads.len();
        let flat: Vec<f64> = grads.into_iter().flatten().collect();
        Ok(vec![Some(Tensor::new(vec![n, 3], flat)?)])
    }
}

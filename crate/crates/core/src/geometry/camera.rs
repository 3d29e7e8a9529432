use serde::{Deserialize, Serialize};

use super::vec3::{self, Mat3, Vec3};
use super::GeometryError;

/// Points at camera-frame depth at or below this are not projectable.
pub const Z_NEAR: f64 = 0.1;

/// Pinhole camera orbiting the world origin.
///
/// Right-handed world with +Z up. The camera sits at `distance` from the
/// origin at the given azimuth (about +Z, from +X) and elevation, and looks
/// at the origin. Image `u` grows to the right and `v` grows downward; the
/// principal point is the image center. `focal` is normalized so that a
/// lateral offset `x` at depth `z` lands `focal · x / z · width / 2` pixels
/// from the center (square pixels, both axes).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub azimuth: f64,
    pub elevation: f64,
    pub distance: f64,
    pub focal: f64,
    pub width: usize,
    pub height: usize,
}

/// Orthonormal frame of a [`Camera`] in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraFrame {
    pub position: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    /// Unit view direction, from the camera toward the origin.
    pub forward: Vec3,
}

impl Camera {
    pub fn new(
        azimuth: f64,
        elevation: f64,
        distance: f64,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let cam = Self {
            azimuth,
            elevation,
            distance,
            focal,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = [self.azimuth, self.elevation, self.distance, self.focal]
            .iter()
            .all(|v| v.is_finite());
        if !finite
            || self.distance <= 0.0
            || self.focal <= 0.0
            || self.width == 0
            || self.height == 0
            || self.elevation.abs() >= std::f64::consts::FRAC_PI_2 - 1e-6
        {
            return Err(GeometryError::InvalidCamera(format!("{self:?}")));
        }
        Ok(())
    }

    pub fn with_azimuth(mut self, azimuth: f64) -> Self {
        self.azimuth = azimuth;
        self
    }

    pub fn frame(&self) -> CameraFrame {
        let (sa, ca) = self.azimuth.sin_cos();
        let (se, ce) = self.elevation.sin_cos();
        let dir = [ce * ca, ce * sa, se];
        let position = vec3::scale(dir, self.distance);
        let forward = vec3::scale(dir, -1.0);
        let right = vec3::normalize(vec3::cross(forward, [0.0, 0.0, 1.0]));
        let up = vec3::cross(right, forward);
        CameraFrame {
            position,
            right,
            up,
            forward,
        }
    }

    /// Pixels per unit of `x / z`.
    pub fn pixel_scale(&self) -> f64 {
        self.focal * self.width as f64 / 2.0
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    /// Proper rotation whose columns are the camera's right, up and backward
    /// axes in world coordinates. Maps camera-relative orientations to world.
    pub fn camera_to_world(&self) -> Mat3 {
        let f = self.frame();
        let back = vec3::scale(f.forward, -1.0);
        [
            [f.right[0], f.up[0], back[0]],
            [f.right[1], f.up[1], back[1]],
            [f.right[2], f.up[2], back[2]],
        ]
    }

    /// World point to `(right, up, depth)` camera coordinates.
    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let f = self.frame();
        let d = vec3::sub(p, f.position);
        [vec3::dot(d, f.right), vec3::dot(d, f.up), vec3::dot(d, f.forward)]
    }

    /// World point to `(u, v, depth)`.
    pub fn project(&self, p: Vec3) -> Result<(f64, f64, f64), GeometryError> {
        let [x, y, z] = self.to_camera(p);
        if z <= Z_NEAR {
            return Err(GeometryError::BehindCamera { depth: z });
        }
        let s = self.pixel_scale();
        let (cx, cy) = self.principal_point();
        Ok((cx + s * x / z, cy - s * y / z, z))
    }

    /// Inverse of [`Camera::project`].
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Result<Vec3, GeometryError> {
        if depth <= 0.0 || !depth.is_finite() {
            return Err(GeometryError::NonPositiveDepth(depth));
        }
        let f = self.frame();
        let s = self.pixel_scale();
        let (cx, cy) = self.principal_point();
        let x = (u - cx) * depth / s;
        let y = -(v - cy) * depth / s;
        Ok(vec3::add(
            f.position,
            vec3::add(
                vec3::add(vec3::scale(f.right, x), vec3::scale(f.up, y)),
                vec3::scale(f.forward, depth),
            ),
        ))
    }
}

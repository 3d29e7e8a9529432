use serde::{Deserialize, Serialize};

use super::vec3::{Mat3, Vec3};
use super::GeometryError;
use crate::grad::rotation_entries;

/// Rotation quaternion `w + xi + yj + zk`. Any nonzero scale is accepted
/// and normalized before use.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn from_slice(q: &[f64]) -> Self {
        Self::new(q[0], q[1], q[2], q[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(self) -> f64 {
        self.to_array().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn normalize(self) -> Result<Self, GeometryError> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(GeometryError::ZeroQuaternion);
        }
        Ok(Self::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    /// Orthonormal rotation matrix, determinant +1.
    pub fn to_matrix(self) -> Result<Mat3, GeometryError> {
        Ok(rotation_entries(&self.normalize()?.to_array()))
    }

    /// Unit quaternion for a rotation by `angle` about `axis`.
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = super::vec3::norm(axis);
        let (s, c) = (angle / 2.0).sin_cos();
        Self::new(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n)
    }

    /// Unit quaternion of a proper rotation matrix.
    pub fn from_matrix(m: &Mat3) -> Self {
        let trace = m[0][0] + m[1][1] + m[2][2];
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            Self::new(
                0.25 * s,
                (m[2][1] - m[1][2]) / s,
                (m[0][2] - m[2][0]) / s,
                (m[1][0] - m[0][1]) / s,
            )
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
            Self::new(
                (m[2][1] - m[1][2]) / s,
                0.25 * s,
                (m[0][1] + m[1][0]) / s,
                (m[0][2] + m[2][0]) / s,
            )
        } else if m[1][1] > m[2][2] {
            let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
            Self::new(
                (m[0][2] - m[2][0]) / s,
                (m[0][1] + m[1][0]) / s,
                0.25 * s,
                (m[1][2] + m[2][1]) / s,
            )
        } else {
            let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
            Self::new(
                (m[1][0] - m[0][1]) / s,
                (m[0][2] + m[2][0]) / s,
                (m[1][2] + m[2][1]) / s,
                0.25 * s,
            )
        };
        q.normalize().unwrap_or(Self::IDENTITY)
    }
}

/// Convenience wrapper over [`Quaternion::to_matrix`].
pub fn quat_to_matrix(q: Quaternion) -> Result<Mat3, GeometryError> {
    q.to_matrix()
}

/// Rotation followed by translation: `v ↦ R·v + T`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Quaternion,
    pub translation: Vec3,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: Quaternion::IDENTITY,
        translation: [0.0; 3],
    };

    pub fn new(rotation: Quaternion, translation: Vec3) -> Result<Self, GeometryError> {
        let rotation = rotation.normalize()?;
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("translation"));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn apply(&self, v: Vec3) -> Result<Vec3, GeometryError> {
        let r = self.rotation.to_matrix()?;
        Ok(super::vec3::add(super::vec3::mat_vec(&r, v), self.translation))
    }
}

#[cfg(test)]
mod tests {
    use super::super::vec3::{self, determinant, mat_mul, transpose, IDENTITY};
    use super::*;
    use proptest::prelude::*;

    fn close(a: &Mat3, b: &Mat3, tol: f64) -> bool {
        (0..3).all(|i| (0..3).all(|j| (a[i][j] - b[i][j]).abs() < tol))
    }

    #[test]
    fn identity_quaternion() {
        assert!(close(&Quaternion::IDENTITY.to_matrix().unwrap(), &IDENTITY, 0.0 + 1e-15));
    }

    #[test]
    fn half_turn_about_z() {
        let m = Quaternion::new(0.0, 0.0, 0.0, 1.0).to_matrix().unwrap();
        let want = [[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(close(&m, &want, 1e-15));
    }

    #[test]
    fn scale_invariance() {
        let m = Quaternion::new(2.0, 0.0, 0.0, 0.0).to_matrix().unwrap();
        assert!(close(&m, &IDENTITY, 1e-15));
    }

    #[test]
    fn zero_quaternion_is_an_error() {
        assert_eq!(
            Quaternion::new(0.0, 0.0, 0.0, 0.0).to_matrix(),
            Err(GeometryError::ZeroQuaternion)
        );
    }

    #[test]
    fn matrix_round_trip() {
        let q = Quaternion::new(0.3, -0.5, 0.7, 0.1).normalize().unwrap();
        let back = Quaternion::from_matrix(&q.to_matrix().unwrap());
        let same = (back.to_array().iter().zip(q.to_array()).all(|(a, b)| (a - b).abs() < 1e-12))
            || (back.to_array().iter().zip(q.to_array()).all(|(a, b)| (a + b).abs() < 1e-12));
        assert!(same);
    }

    fn quat() -> impl Strategy<Value = Quaternion> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("nonzero", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3)
            .prop_map(|(w, x, y, z)| Quaternion::new(w, x, y, z))
    }

    proptest! {
        #[test]
        fn rotations_are_proper_and_double_covered(q in quat()) {
            let m = q.to_matrix().unwrap();
            prop_assert!(close(&mat_mul(&m, &transpose(&m)), &IDENTITY, 1e-12));
            prop_assert!((determinant(&m) - 1.0).abs() < 1e-12);
            let neg = Quaternion::new(-q.w, -q.x, -q.y, -q.z).to_matrix().unwrap();
            prop_assert!(close(&m, &neg, 1e-15));
            let n = q.normalize().unwrap().norm();
            prop_assert!((n * n - 1.0).abs() < 1e-9);
        }

        #[test]
        fn transforms_preserve_distances(q in quat(), t in prop::array::uniform3(-5.0..5.0f64),
                                          a in prop::array::uniform3(-2.0..2.0f64),
                                          b in prop::array::uniform3(-2.0..2.0f64)) {
            let tf = RigidTransform::new(q, t).unwrap();
            let d0 = vec3::norm(vec3::sub(a, b));
            let d1 = vec3::norm(vec3::sub(tf.apply(a).unwrap(), tf.apply(b).unwrap()));
            prop_assert!((d0 - d1).abs() < 1e-9);
        }
    }
}

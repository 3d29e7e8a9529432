//! Part translations from probability and depth maps: the expected pixel
//! position and depth under each part's probability map, unprojected
//! through the camera.

use std::any::Any;
use std::rc::Rc;

use crate::geometry::{vec3, Camera, Vec3};
use crate::grad::{CustomOp, GradError, Graph, Saved, Tensor, Var};

/// Tape op: `[3, N]` rows `(u, v, z)` → `[N, 3]` world points.
pub struct UnprojectOp {
    camera: Camera,
}

impl UnprojectOp {
    pub fn new(camera: Camera) -> Self {
        Self { camera }
    }
}

fn unproject_raw(camera: &Camera, u: f64, v: f64, z: f64) -> Vec3 {
    let f = camera.frame();
    let s = camera.pixel_scale();
    let (cx, cy) = camera.principal_point();
    let x = (u - cx) * z / s;
    let y = (cy - v) * z / s;
    vec3::add(
        f.position,
        vec3::add(
            vec3::add(vec3::scale(f.right, x), vec3::scale(f.up, y)),
            vec3::scale(f.forward, z),
        ),
    )
}

impl CustomOp for UnprojectOp {
    fn name(&self) -> &str {
        "unproject"
    }

    fn arity(&self) -> usize {
        1
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Saved), GradError> {
        let t = inputs[0];
        if t.ndim() != 2 || t.shape()[0] != 3 {
            return Err(GradError::Shape {
                op: "unproject",
                detail: format!("expected [3, N], got {:?}", t.shape()),
            });
        }
        let n = t.shape()[1];
        let d = t.data();
        let mut out = Vec::with_capacity(3 * n);
        for k in 0..n {
            let z = d[2 * n + k];
            if z <= 0.0 {
                return Err(GradError::Domain {
                    op: "unproject",
                    detail: format!("non-positive depth {z} for part {k}"),
                });
            }
            out.extend(unproject_raw(&self.camera, d[k], d[n + k], z));
        }
        Ok((Tensor::new(vec![n, 3], out)?, Box::new(())))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        _saved: &dyn Any,
        grad_output: &Tensor,
    ) -> Result<Vec<Option<Tensor>>, GradError> {
        let f = self.camera.frame();
        let s = self.camera.pixel_scale();
        let (cx, cy) = self.camera.principal_point();
        let d = inputs[0].data();
        let n = inputs[0].shape()[1];
        let g = grad_output.data();
        let mut out = vec![0.0; 3 * n];
        for k in 0..n {
            let (u, v, z) = (d[k], d[n + k], d[2 * n + k]);
            let gk = [g[3 * k], g[3 * k + 1], g[3 * k + 2]];
            out[k] = vec3::dot(gk, f.right) * z / s;
            out[n + k] = -vec3::dot(gk, f.up) * z / s;
            let dz = vec3::add(
                vec3::add(
                    vec3::scale(f.right, (u - cx) / s),
                    vec3::scale(f.up, (cy - v) / s),
                ),
                f.forward,
            );
            out[2 * n + k] = vec3::dot(gk, dz);
        }
        Ok(vec![Some(Tensor::new(vec![3, n], out)?)])
    }
}

/// Pixel-center coordinate grids `(x + 0.5, y + 0.5)` as `[H, W]` tensors.
pub fn pixel_grids(width: usize, height: usize) -> (Tensor, Tensor) {
    let xs = (0..height * width).map(|i| (i % width) as f64 + 0.5).collect();
    let ys = (0..height * width).map(|i| (i / width) as f64 + 0.5).collect();
    (
        Tensor::new(vec![height, width], xs).expect("grid shape"),
        Tensor::new(vec![height, width], ys).expect("grid shape"),
    )
}

/// Translations of all parts on the tape. `prob` and `depth` are
/// `[N, H, W]`; the result is `[N, 3]` in world coordinates.
pub fn translations_on_tape(
    g: &mut Graph,
    prob: Var,
    depth: Var,
    camera: &Camera,
) -> Result<Var, GradError> {
    let s = g.shape(prob).to_vec();
    if s.len() != 3 {
        return Err(GradError::Shape {
            op: "translations",
            detail: format!("probability maps must be [N, H, W], got {s:?}"),
        });
    }
    let (n, h, w) = (s[0], s[1], s[2]);
    let (xs, ys) = pixel_grids(w, h);
    let xs = g.constant(xs);
    let ys = g.constant(ys);
    let u = g.map_dot(prob, xs)?;
    let v = g.map_dot(prob, ys)?;
    let z = g.map_dot(prob, depth)?;
    let u = g.reshape(u, &[1, n])?;
    let v = g.reshape(v, &[1, n])?;
    let z = g.reshape(z, &[1, n])?;
    let uvz = g.concat(&[u, v, z])?;
    let op = g.register_custom(Rc::new(UnprojectOp::new(*camera)))?;
    g.apply_custom(&op, &[uvz])
}

/// Translation of part `k` from plain `[N, H, W]` maps.
pub fn retrieve_translation_maps(prob: &Tensor, depth: &Tensor, camera: &Camera, k: usize) -> Vec3 {
    let (h, w) = (prob.shape()[1], prob.shape()[2]);
    let plane = h * w;
    let p = &prob.data()[k * plane..(k + 1) * plane];
    let d = &depth.data()[k * plane..(k + 1) * plane];
    let (mut u, mut v, mut z) = (0.0, 0.0, 0.0);
    for (i, (&pi, &di)) in p.iter().zip(d).enumerate() {
        u += pi * ((i % w) as f64 + 0.5);
        v += pi * ((i / w) as f64 + 0.5);
        z += pi * di;
    }
    unproject_raw(camera, u, v, z)
}

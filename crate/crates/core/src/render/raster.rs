//! Z-buffered triangle rasterization with flat shading, a soft silhouette
//! band outside every triangle, and the matching reverse pass.
//!
//! A pixel whose center lies inside some triangle takes the nearest such
//! triangle (ties go to the lower face index): silhouette 1 and that face's
//! shade. A pixel covered by nothing but within `sigma_edge` pixels of some
//! triangle gets silhouette `1 − d / sigma_edge`, where `d` is the distance
//! to the closest triangle, and that triangle's shade scaled by the
//! silhouette over the background. Everything else is background.
//!
//! Gradients reach vertices through the face normals of covered and band
//! pixels (shading) and through the screen-space edge geometry of band
//! pixels (coverage). Covered pixels carry no positional gradient.

use super::{LightRig, RenderError, RenderSettings};
use crate::geometry::vec3::{self, Vec3};
use crate::geometry::{Camera, Z_NEAR};

/// One corner of a (possibly clipped) screen triangle: the camera-space
/// point `p[a] + t · (p[b] − p[a])`. Unclipped corners have `a == b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Corner {
    a: usize,
    b: usize,
    t: f64,
}

#[derive(Clone, Copy, Debug)]
struct ScreenTri {
    corners: [Corner; 3],
    uv: [[f64; 2]; 3],
    z: [f64; 3],
}

#[derive(Clone, Copy, Debug)]
enum Hit {
    Background,
    Covered {
        face: usize,
    },
    Band {
        face: usize,
        from: Corner,
        to: Corner,
        /// Closest point parameter along `from → to`, clamped to `[0, 1]`.
        t: f64,
        dist: f64,
    },
}

/// Rendered images. `rgb` is planar `[3, H, W]`; `silhouette` and `depth`
/// are `[H, W]`. Background depth is `+∞`.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<f64>,
    pub silhouette: Vec<f64>,
    pub depth: Vec<f64>,
    /// Zero-area screen triangles that were skipped.
    pub degenerate_triangles: usize,
}

impl RenderOutput {
    pub fn rgb_at(&self, x: usize, y: usize) -> [f64; 3] {
        let plane = self.width * self.height;
        let i = y * self.width + x;
        [self.rgb[i], self.rgb[plane + i], self.rgb[2 * plane + i]]
    }

    pub fn silhouette_at(&self, x: usize, y: usize) -> f64 {
        self.silhouette[y * self.width + x]
    }

    pub fn depth_at(&self, x: usize, y: usize) -> f64 {
        self.depth[y * self.width + x]
    }
}

/// Forward state needed by [`RasterState::backward`].
#[derive(Clone, Debug)]
pub struct RasterState {
    width: usize,
    height: usize,
    hits: Vec<Hit>,
    camera_points: Vec<Vec3>,
    world_points: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    face_cos: Vec<f64>,
    face_albedo: Vec<[f64; 3]>,
    camera: Camera,
    lights: LightRig,
    settings: RenderSettings,
}

/// Band distances closer than this (pixels) count as ties.
const BAND_TIE: f64 = 1e-9;

fn edge_fn(a: [f64; 2], b: [f64; 2], q: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (q[1] - a[1]) - (b[1] - a[1]) * (q[0] - a[0])
}

/// Distance from `q` to segment `a → b` and the clamped closest parameter.
fn segment_distance(a: [f64; 2], b: [f64; 2], q: [f64; 2]) -> (f64, f64) {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 {
        (((q[0] - a[0]) * d[0] + (q[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let c = [a[0] + t * d[0], a[1] + t * d[1]];
    (((q[0] - c[0]).powi(2) + (q[1] - c[1]).powi(2)).sqrt(), t)
}

fn corner_point(points: &[Vec3], c: Corner) -> Vec3 {
    if c.a == c.b {
        points[c.a]
    } else {
        vec3::add(points[c.a], vec3::scale(vec3::sub(points[c.b], points[c.a]), c.t))
    }
}

/// Clip a camera-space triangle against `z > Z_NEAR`; returns a fan of
/// triangles (0, 1 or 2).
fn clip_near(points: &[Vec3], face: [usize; 3]) -> Vec<[Corner; 3]> {
    let front: Vec<bool> = face.iter().map(|&i| points[i][2] > Z_NEAR).collect();
    let keep = |i: usize| Corner { a: i, b: i, t: 0.0 };
    match front.iter().filter(|&&f| f).count() {
        0 => Vec::new(),
        3 => vec![face.map(keep)],
        _ => {
            let mut poly = Vec::with_capacity(4);
            for k in 0..3 {
                let (i, j) = (face[k], face[(k + 1) % 3]);
                if front[k] {
                    poly.push(keep(i));
                }
                if front[k] != front[(k + 1) % 3] {
                    let (zi, zj) = (points[i][2], points[j][2]);
                    poly.push(Corner {
                        a: i,
                        b: j,
                        t: (Z_NEAR - zi) / (zj - zi),
                    });
                }
            }
            (1..poly.len() - 1)
                .map(|k| [poly[0], poly[k], poly[k + 1]])
                .collect()
        }
    }
}

/// Shade factor `albedo · (k_amb + k_dir · max(0, cos))` per channel.
fn shade(albedo: [f64; 3], cos: f64, lights: &LightRig) -> [f64; 3] {
    let k = lights.ambient + lights.directional * cos.max(0.0);
    albedo.map(|a| a * k)
}

/// Rasterize triangles given world-space `points` and global `faces`.
/// `face_albedo`, when present, overrides the uniform gray per face.
pub fn rasterize_points(
    points: &[Vec3],
    faces: &[[usize; 3]],
    camera: &Camera,
    lights: &LightRig,
    settings: &RenderSettings,
    face_albedo: Option<&[[f64; 3]]>,
) -> Result<(RenderOutput, RasterState), RenderError> {
    camera.validate()?;
    lights.validate()?;
    let (w, h) = (camera.width, camera.height);
    if w == 0 || h == 0 {
        return Err(RenderError::EmptyImage);
    }
    if let Some(a) = face_albedo {
        if a.len() != faces.len() {
            return Err(RenderError::AlbedoCount {
                faces: faces.len(),
                albedo: a.len(),
            });
        }
    }
    if let Some(bad) = faces.iter().flatten().find(|&&i| i >= points.len()) {
        return Err(RenderError::FaceIndex(*bad));
    }
    let frame = camera.frame();
    let camera_points: Vec<Vec3> = points.iter().map(|p| camera.to_camera(*p)).collect();
    let scale = camera.pixel_scale();
    let (cx, cy) = camera.principal_point();
    let sigma = settings.sigma_edge;

    let face_cos: Vec<f64> = faces
        .iter()
        .map(|f| {
            let cr = vec3::cross(
                vec3::sub(points[f[1]], points[f[0]]),
                vec3::sub(points[f[2]], points[f[0]]),
            );
            let n = vec3::norm(cr);
            if n > 0.0 {
                -vec3::dot(cr, frame.forward) / n
            } else {
                0.0
            }
        })
        .collect();
    let face_albedo: Vec<[f64; 3]> = match face_albedo {
        Some(a) => a.to_vec(),
        None => vec![[settings.albedo; 3]; faces.len()],
    };

    let n_pix = w * h;
    let mut zbuf = vec![f64::INFINITY; n_pix];
    let mut band = vec![f64::INFINITY; n_pix];
    let mut hits = vec![Hit::Background; n_pix];
    let mut band_depth = vec![f64::INFINITY; n_pix];
    let mut degenerate = 0;

    for (fi, face) in faces.iter().enumerate() {
        for corners in clip_near(&camera_points, *face) {
            let cam = corners.map(|c| corner_point(&camera_points, c));
            let tri = ScreenTri {
                corners,
                uv: cam.map(|p| [cx + scale * p[0] / p[2], cy - scale * p[1] / p[2]]),
                z: cam.map(|p| p[2]),
            };
            let area = edge_fn(tri.uv[0], tri.uv[1], tri.uv[2]);
            if area.abs() < 1e-12 {
                degenerate += 1;
                continue;
            }
            let lo_u = tri.uv.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min) - sigma;
            let hi_u = tri.uv.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max) + sigma;
            let lo_v = tri.uv.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min) - sigma;
            let hi_v = tri.uv.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max) + sigma;
            // pixel x covers centers x + 0.5
            let x0 = (lo_u - 0.5).ceil().max(0.0) as usize;
            let y0 = (lo_v - 0.5).ceil().max(0.0) as usize;
            let x1 = ((hi_u - 0.5).floor().min(w as f64 - 1.0)).max(-1.0);
            let y1 = ((hi_v - 0.5).floor().min(h as f64 - 1.0)).max(-1.0);
            if x1 < 0.0 || y1 < 0.0 {
                continue;
            }
            let (x1, y1) = (x1 as usize, y1 as usize);
            for py in y0..=y1 {
                for px in x0..=x1 {
                    let q = [px as f64 + 0.5, py as f64 + 0.5];
                    let pix = py * w + px;
                    let b = [
                        edge_fn(tri.uv[1], tri.uv[2], q) / area,
                        edge_fn(tri.uv[2], tri.uv[0], q) / area,
                        edge_fn(tri.uv[0], tri.uv[1], q) / area,
                    ];
                    if b.iter().all(|&x| x >= 0.0) {
                        let inv_z = b[0] / tri.z[0] + b[1] / tri.z[1] + b[2] / tri.z[2];
                        let z = 1.0 / inv_z;
                        if z < zbuf[pix] {
                            zbuf[pix] = z;
                            hits[pix] = Hit::Covered { face: fi };
                        }
                        continue;
                    }
                    if zbuf[pix].is_finite() {
                        // already covered by an earlier face; the band can
                        // never win this pixel
                        continue;
                    }
                    let mut best = (f64::INFINITY, 0.0, 0);
                    for k in 0..3 {
                        let (d, t) = segment_distance(tri.uv[k], tri.uv[(k + 1) % 3], q);
                        if d < best.0 {
                            best = (d, t, k);
                        }
                    }
                    let (d, t, k) = best;
                    // Silhouette edges are shared by a front- and a back-facing
                    // triangle; rounding must not decide which one shades the band.
                    let wins = match hits[pix] {
                        Hit::Band { face, .. } if (d - band[pix]).abs() <= BAND_TIE => {
                            face_cos[fi] > 0.0 && face_cos[face] <= 0.0
                        }
                        _ => d < band[pix],
                    };
                    if d < sigma && wins {
                        band[pix] = d;
                        let k1 = (k + 1) % 3;
                        hits[pix] = Hit::Band {
                            face: fi,
                            from: tri.corners[k],
                            to: tri.corners[k1],
                            t,
                            dist: d,
                        };
                        let inv_z = (1.0 - t) / tri.z[k] + t / tri.z[k1];
                        band_depth[pix] = 1.0 / inv_z;
                    }
                }
            }
        }
    }

    let bg = settings.background;
    let mut rgb = vec![0.0; 3 * n_pix];
    let mut silhouette = vec![0.0; n_pix];
    let mut depth = vec![f64::INFINITY; n_pix];
    for pix in 0..n_pix {
        let (sil, color, z) = match hits[pix] {
            // A later face may have covered a pixel that held a band hit.
            Hit::Covered { face } => (1.0, shade(face_albedo[face], face_cos[face], lights), zbuf[pix]),
            Hit::Band { face, dist, .. } => (
                1.0 - dist / sigma,
                shade(face_albedo[face], face_cos[face], lights),
                band_depth[pix],
            ),
            Hit::Background => (0.0, bg, f64::INFINITY),
        };
        silhouette[pix] = sil;
        depth[pix] = z;
        for c in 0..3 {
            rgb[c * n_pix + pix] = sil * color[c] + (1.0 - sil) * bg[c];
        }
    }

    let output = RenderOutput {
        width: w,
        height: h,
        rgb,
        silhouette,
        depth,
        degenerate_triangles: degenerate,
    };
    let state = RasterState {
        width: w,
        height: h,
        hits,
        camera_points,
        world_points: points.to_vec(),
        faces: faces.to_vec(),
        face_cos,
        face_albedo,
        camera: *camera,
        lights: *lights,
        settings: *settings,
    };
    Ok((output, state))
}

impl RasterState {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Per pixel: 0 background, 1 covered, 2 band, with the winning face.
    /// Two states with equal signatures share one smooth branch.
    pub fn coverage_signature(&self) -> Vec<(u8, usize)> {
        self.hits
            .iter()
            .map(|h| match *h {
                Hit::Background => (0, 0),
                Hit::Covered { face } => (1, face),
                Hit::Band { face, .. } => (2, face),
            })
            .collect()
    }

    /// Gradient with respect to every world-space input point, given
    /// upstream gradients of planar `[3, H, W]` rgb and `[H, W]` silhouette.
    pub fn backward(&self, grad_rgb: &[f64], grad_sil: &[f64]) -> Result<Vec<Vec3>, RenderError> {
        let n_pix = self.width * self.height;
        if grad_rgb.len() != 3 * n_pix || grad_sil.len() != n_pix {
            return Err(RenderError::GradientShape {
                expected: 4 * n_pix,
                got: grad_rgb.len() + grad_sil.len(),
            });
        }
        let lights = &self.lights;
        let sigma = self.settings.sigma_edge;
        let bg = self.settings.background;
        let scale = self.camera.pixel_scale();
        let (cx, cy) = self.camera.principal_point();

        let mut grad_cos = vec![0.0; self.faces.len()];
        let mut grad_cam = vec![[0.0; 3]; self.camera_points.len()];

        for pix in 0..n_pix {
            let g = [grad_rgb[pix], grad_rgb[n_pix + pix], grad_rgb[2 * n_pix + pix]];
            match self.hits[pix] {
                Hit::Background => {}
                Hit::Covered { face } => {
                    if self.face_cos[face] > 0.0 {
                        let a = self.face_albedo[face];
                        grad_cos[face] +=
                            lights.directional * (g[0] * a[0] + g[1] * a[1] + g[2] * a[2]);
                    }
                }
                Hit::Band {
                    face,
                    from,
                    to,
                    t,
                    dist,
                } => {
                    let sil = 1.0 - dist / sigma;
                    let a = self.face_albedo[face];
                    let color = shade(a, self.face_cos[face], lights);
                    if self.face_cos[face] > 0.0 {
                        grad_cos[face] += sil
                            * lights.directional
                            * (g[0] * a[0] + g[1] * a[1] + g[2] * a[2]);
                    }
                    let g_sil = grad_sil[pix]
                        + (0..3).map(|c| g[c] * (color[c] - bg[c])).sum::<f64>();
                    if g_sil == 0.0 || dist == 0.0 {
                        continue;
                    }
                    let g_dist = -g_sil / sigma;
                    let q = [
                        (pix % self.width) as f64 + 0.5,
                        (pix / self.width) as f64 + 0.5,
                    ];
                    let p0 = corner_point(&self.camera_points, from);
                    let p1 = corner_point(&self.camera_points, to);
                    let s0 = [cx + scale * p0[0] / p0[2], cy - scale * p0[1] / p0[2]];
                    let s1 = [cx + scale * p1[0] / p1[2], cy - scale * p1[1] / p1[2]];
                    let c = [s0[0] + t * (s1[0] - s0[0]), s0[1] + t * (s1[1] - s0[1])];
                    let n = [(q[0] - c[0]) / dist, (q[1] - c[1]) / dist];
                    // ∂d/∂s0 = −(1 − t)·n, ∂d/∂s1 = −t·n
                    for (corner, p, wgt) in [(from, p0, 1.0 - t), (to, p1, t)] {
                        if wgt == 0.0 {
                            continue;
                        }
                        let gu = -g_dist * wgt * n[0];
                        let gv = -g_dist * wgt * n[1];
                        let gp = [
                            gu * scale / p[2],
                            -gv * scale / p[2],
                            (-gu * scale * p[0] + gv * scale * p[1]) / (p[2] * p[2]),
                        ];
                        self.push_corner_grad(corner, gp, &mut grad_cam);
                    }
                }
            }
        }

        let frame = self.camera.frame();
        let rows = [frame.right, frame.up, frame.forward];
        let mut grad_world: Vec<Vec3> = grad_cam
            .iter()
            .map(|g| {
                let mut out = [0.0; 3];
                for (k, row) in rows.iter().enumerate() {
                    for i in 0..3 {
                        out[i] += row[i] * g[k];
                    }
                }
                out
            })
            .collect();

        // cos = −n·forward with n = cr / |cr|, cr = (p1 − p0) × (p2 − p0)
        for (fi, f) in self.faces.iter().enumerate() {
            let gc = grad_cos[fi];
            if gc == 0.0 {
                continue;
            }
            let [p0, p1, p2] = f.map(|i| self.world_points[i]);
            let (e1, e2) = (vec3::sub(p1, p0), vec3::sub(p2, p0));
            let cr = vec3::cross(e1, e2);
            let len = vec3::norm(cr);
            if len == 0.0 {
                continue;
            }
            let n = vec3::scale(cr, 1.0 / len);
            let g_n = vec3::scale(frame.forward, -gc);
            let g_cr = vec3::scale(vec3::sub(g_n, vec3::scale(n, vec3::dot(n, g_n))), 1.0 / len);
            let g_e1 = vec3::cross(e2, g_cr);
            let g_e2 = vec3::cross(g_cr, e1);
            grad_world[f[1]] = vec3::add(grad_world[f[1]], g_e1);
            grad_world[f[2]] = vec3::add(grad_world[f[2]], g_e2);
            grad_world[f[0]] = vec3::sub(grad_world[f[0]], vec3::add(g_e1, g_e2));
        }
        Ok(grad_world)
    }

    fn push_corner_grad(&self, c: Corner, g: Vec3, grad_cam: &mut [Vec3]) {
        if c.a == c.b {
            grad_cam[c.a] = vec3::add(grad_cam[c.a], g);
            return;
        }
        // p = pa + t (pb − pa), t = (z_near − za) / (zb − za); p.z is pinned
        let (pa, pb) = (self.camera_points[c.a], self.camera_points[c.b]);
        let t = c.t;
        let dz = pb[2] - pa[2];
        let diff = vec3::sub(pb, pa);
        let g_t = vec3::dot(g, diff);
        let dt_dza = (t - 1.0) / dz;
        let dt_dzb = -t / dz;
        let mut ga = vec3::scale(g, 1.0 - t);
        let mut gb = vec3::scale(g, t);
        ga[2] += g_t * dt_dza;
        gb[2] += g_t * dt_dzb;
        grad_cam[c.a] = vec3::add(grad_cam[c.a], ga);
        grad_cam[c.b] = vec3::add(grad_cam[c.b], gb);
    }
}

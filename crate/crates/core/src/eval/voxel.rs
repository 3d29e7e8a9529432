//! Occupancy grids over a cube centered at the origin.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::geometry::vec3::{self, Vec3};
use crate::geometry::TriangleMesh;

pub const BENCHMARK_RESOLUTION: usize = 32;

/// Cubic grid of side `extent` centered at the origin, `resolution` cells
/// per axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub resolution: usize,
    pub extent: f64,
}

impl GridSpec {
    pub fn benchmark(extent: f64) -> Self {
        Self {
            resolution: BENCHMARK_RESOLUTION,
            extent,
        }
    }

    pub fn cell(&self) -> f64 {
        self.extent / self.resolution as f64
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let c = self.cell();
        let o = -self.extent / 2.0;
        [o + (i as f64 + 0.5) * c, o + (j as f64 + 0.5) * c, o + (k as f64 + 0.5) * c]
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.resolution + j) * self.resolution + k
    }

    fn validate(&self) -> Result<(), EvalError> {
        if self.resolution == 0 || !(self.extent > 0.0 && self.extent.is_finite()) {
            return Err(EvalError::Grid(format!("{self:?}")));
        }
        Ok(())
    }

    /// Inclusive cell range covering `[lo, hi]` on one axis, or `None` when
    /// the interval misses the grid.
    fn span(&self, lo: f64, hi: f64) -> Option<(usize, usize)> {
        let c = self.cell();
        let o = -self.extent / 2.0;
        let a = ((lo - o) / c).floor();
        let b = ((hi - o) / c).floor();
        let n = self.resolution as f64;
        if b < 0.0 || a >= n {
            return None;
        }
        Some((a.max(0.0) as usize, b.min(n - 1.0) as usize))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub spec: GridSpec,
    pub occupied: Vec<bool>,
}

impl VoxelGrid {
    pub fn empty(spec: GridSpec) -> Self {
        let n = spec.resolution;
        Self {
            spec,
            occupied: vec![false; n * n * n],
        }
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.occupied[self.spec.index(i, j, k)]
    }

    pub fn count(&self) -> usize {
        self.occupied.iter().filter(|&&b| b).count()
    }

    pub fn union_with(&mut self, other: &VoxelGrid) -> Result<(), EvalError> {
        check_specs(&self.spec, &other.spec)?;
        self.occupied.iter_mut().zip(&other.occupied).for_each(|(a, &b)| *a |= b);
        Ok(())
    }
}

fn check_specs(a: &GridSpec, b: &GridSpec) -> Result<(), EvalError> {
    if a != b {
        return Err(EvalError::Grid(format!("grid specs differ: {a:?} vs {b:?}")));
    }
    Ok(())
}

/// Separating-axis test between a triangle and an axis-aligned box.
fn tri_box_overlap(center: Vec3, half: f64, tri: [Vec3; 3]) -> bool {
    let v = tri.map(|p| vec3::sub(p, center));
    let e = [vec3::sub(v[1], v[0]), vec3::sub(v[2], v[1]), vec3::sub(v[0], v[2])];
    // box face normals
    for k in 0..3 {
        let lo = v[0][k].min(v[1][k]).min(v[2][k]);
        let hi = v[0][k].max(v[1][k]).max(v[2][k]);
        if lo > half || hi < -half {
            return false;
        }
    }
    // triangle normal
    let n = vec3::cross(e[0], e[1]);
    let r = half * (n[0].abs() + n[1].abs() + n[2].abs());
    if vec3::dot(n, v[0]).abs() > r {
        return false;
    }
    // edge cross products
    for ed in e {
        for k in 0..3 {
            let mut axis = [0.0; 3];
            axis[k] = 1.0;
            let a = vec3::cross(axis, ed);
            let p = v.map(|x| vec3::dot(a, x));
            let r = half * (a[0].abs() + a[1].abs() + a[2].abs());
            let lo = p[0].min(p[1]).min(p[2]);
            let hi = p[0].max(p[1]).max(p[2]);
            if lo > r || hi < -r {
                return false;
            }
        }
    }
    true
}

/// Generalized winding number of a closed mesh around `p`.
pub fn winding_number(mesh: &TriangleMesh, p: Vec3) -> f64 {
    let v = mesh.vertices();
    let total: f64 = mesh
        .faces()
        .iter()
        .map(|f| {
            let [a, b, c] = f.map(|i| vec3::sub(v[i], p));
            let (la, lb, lc) = (vec3::norm(a), vec3::norm(b), vec3::norm(c));
            let num = vec3::dot(a, vec3::cross(b, c));
            let den = la * lb * lc + vec3::dot(a, b) * lc + vec3::dot(b, c) * la + vec3::dot(c, a) * lb;
            2.0 * num.atan2(den)
        })
        .sum();
    total / (4.0 * std::f64::consts::PI)
}

/// Occupancy of a closed mesh.
///
/// Cells touched by the surface form a watertight shell; flooding the
/// exterior from the grid boundary through untouched cells leaves the
/// interior. Shell cells count as occupied when their center lies inside
/// the mesh or the surface crosses their central half-size core, so thin
/// features survive without inflating volumes by a whole cell layer.
pub fn voxelize(mesh: &TriangleMesh, spec: GridSpec) -> Result<VoxelGrid, EvalError> {
    spec.validate()?;
    if let Some(((a, b), faces)) = mesh.non_manifold_edge() {
        return Err(EvalError::OpenMesh { a, b, faces });
    }
    let n = spec.resolution;
    let half = spec.cell() / 2.0;
    let mut grid = VoxelGrid::empty(spec);
    let mut shell = vec![false; n * n * n];
    let v = mesh.vertices();
    for f in mesh.faces() {
        let tri = f.map(|i| v[i]);
        let lo = |k: usize| tri[0][k].min(tri[1][k]).min(tri[2][k]);
        let hi = |k: usize| tri[0][k].max(tri[1][k]).max(tri[2][k]);
        let (Some(si), Some(sj), Some(sk)) = (
            spec.span(lo(0) - half, hi(0) + half),
            spec.span(lo(1) - half, hi(1) + half),
            spec.span(lo(2) - half, hi(2) + half),
        ) else {
            continue;
        };
        for i in si.0..=si.1 {
            for j in sj.0..=sj.1 {
                for k in sk.0..=sk.1 {
                    let idx = spec.index(i, j, k);
                    let c = spec.center(i, j, k);
                    if !shell[idx] && tri_box_overlap(c, half * (1.0 + 1e-9), tri) {
                        shell[idx] = true;
                    }
                    if !grid.occupied[idx] && tri_box_overlap(c, half / 2.0, tri) {
                        grid.occupied[idx] = true;
                    }
                }
            }
        }
    }

    let mut outside = vec![false; n * n * n];
    let mut queue = VecDeque::new();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let border = [i, j, k].iter().any(|&x| x == 0 || x == n - 1);
                let idx = spec.index(i, j, k);
                if border && !shell[idx] {
                    outside[idx] = true;
                    queue.push_back((i, j, k));
                }
            }
        }
    }
    while let Some((i, j, k)) = queue.pop_front() {
        let steps: [(isize, isize, isize); 6] = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)];
        for (di, dj, dk) in steps {
            let (a, b, c) = (i as isize + di, j as isize + dj, k as isize + dk);
            if [a, b, c].iter().any(|&x| x < 0 || x >= n as isize) {
                continue;
            }
            let (a, b, c) = (a as usize, b as usize, c as usize);
            let idx = spec.index(a, b, c);
            if !outside[idx] && !shell[idx] {
                outside[idx] = true;
                queue.push_back((a, b, c));
            }
        }
    }

    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let idx = spec.index(i, j, k);
                if grid.occupied[idx] || outside[idx] {
                    continue;
                }
                grid.occupied[idx] = !shell[idx] || winding_number(mesh, spec.center(i, j, k)) > 0.5;
            }
        }
    }
    Ok(grid)
}

/// Occupancy of the union of several closed meshes.
pub fn voxelize_union(meshes: &[TriangleMesh], spec: GridSpec) -> Result<VoxelGrid, EvalError> {
    let mut out = VoxelGrid::empty(spec);
    for m in meshes {
        out.union_with(&voxelize(m, spec)?)?;
    }
    Ok(out)
}

/// `|∪pred ∩ gt| / |∪pred ∪ gt|`; two empty occupancies score 1.
pub fn union_iou(pred: &[VoxelGrid], gt: &VoxelGrid) -> Result<f64, EvalError> {
    let mut u = VoxelGrid::empty(gt.spec);
    for p in pred {
        u.union_with(p)?;
    }
    Ok(iou(&u, gt)?)
}

pub fn iou(a: &VoxelGrid, b: &VoxelGrid) -> Result<f64, EvalError> {
    check_specs(&a.spec, &b.spec)?;
    let (mut inter, mut uni) = (0usize, 0usize);
    for (&x, &y) in a.occupied.iter().zip(&b.occupied) {
        inter += (x && y) as usize;
        uni += (x || y) as usize;
    }
    Ok(if uni == 0 { 1.0 } else { inter as f64 / uni as f64 })
}

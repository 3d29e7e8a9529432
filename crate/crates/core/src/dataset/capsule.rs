use std::f64::consts::{FRAC_PI_2, PI};

use crate::geometry::TriangleMesh;

pub const MERIDIANS: usize = 8;
pub const PARALLELS: usize = 6;

/// Closed capsule along +Z: a cylinder from `z = 0` to `z = length` with
/// hemispherical caps, `MERIDIANS` around and `PARALLELS` latitude rings
/// (half per cap, the last ring of each cap on its rim).
pub fn capsule(length: f64, radius: f64) -> TriangleMesh {
    let m = MERIDIANS;
    let half = PARALLELS / 2;
    let mut v = vec![[0.0, 0.0, -radius]];
    let ring = |z: f64, r: f64| -> Vec<[f64; 3]> {
        (0..m)
            .map(|j| {
                let a = 2.0 * PI * j as f64 / m as f64;
                [r * a.cos(), r * a.sin(), z]
            })
            .collect()
    };
    for i in 1..=half {
        // polar angle from the bottom pole up to the rim
        let t = FRAC_PI_2 * i as f64 / half as f64;
        v.extend(ring(-radius * t.cos(), radius * t.sin()));
    }
    for i in (0..half).rev() {
        let t = FRAC_PI_2 * i as f64 / half as f64;
        v.extend(ring(length + radius * t.cos(), radius * t.sin()));
    }
    v.push([0.0, 0.0, length + radius]);

    let rings = 2 * half;
    let at = |ring: usize, j: usize| 1 + ring * m + j % m;
    let top = v.len() - 1;
    let mut f = Vec::new();
    for j in 0..m {
        f.push([0, at(0, j + 1), at(0, j)]);
    }
    for r in 0..rings - 1 {
        for j in 0..m {
            let (a, b, c, d) = (at(r, j), at(r, j + 1), at(r + 1, j), at(r + 1, j + 1));
            f.push([a, b, d]);
            f.push([a, d, c]);
        }
    }
    for j in 0..m {
        f.push([top, at(rings - 1, j), at(rings - 1, j + 1)]);
    }
    TriangleMesh::new(v, f).expect("capsule indices are in range")
}

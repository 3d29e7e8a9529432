//! Minimal Wavefront OBJ I/O: `o`, `v x y z` and `f i j k` records with
//! 1-based indices. One object per part, named `part_<index>`.

use std::fmt::Write as _;
use std::path::Path;

use super::mesh::TriangleMesh;
use super::GeometryError;

/// Serialize meshes as named objects `part_0`, `part_1`, ...
pub fn to_obj(meshes: &[TriangleMesh]) -> String {
    let named: Vec<(String, &TriangleMesh)> = meshes
        .iter()
        .enumerate()
        .map(|(i, m)| (format!("part_{i}"), m))
        .collect();
    to_obj_named(&named)
}

pub fn to_obj_named(meshes: &[(String, &TriangleMesh)]) -> String {
    let mut out = String::new();
    let mut base = 1;
    for (name, mesh) in meshes {
        let _ = writeln!(out, "o {name}");
        for v in mesh.vertices() {
            let _ = writeln!(out, "v {} {} {}", v[0], v[1], v[2]);
        }
        for f in mesh.faces() {
            let _ = writeln!(out, "f {} {} {}", f[0] + base, f[1] + base, f[2] + base);
        }
        base += mesh.vertex_count();
    }
    out
}

/// Parse objects in file order. Vertices before the first `o` line form
/// an unnamed object.
pub fn parse_obj(text: &str) -> Result<Vec<(String, TriangleMesh)>, GeometryError> {
    struct Pending {
        name: String,
        first_vertex: usize,
        faces: Vec<[usize; 3]>,
    }
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut objects: Vec<Pending> = Vec::new();
    let bad = |line: usize, msg: &str| GeometryError::Obj(format!("line {}: {msg}", line + 1));
    for (ln, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("o") => objects.push(Pending {
                name: it.collect::<Vec<_>>().join(" "),
                first_vertex: vertices.len(),
                faces: Vec::new(),
            }),
            Some("v") => {
                let xs: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|_| bad(ln, "bad vertex coordinate")))
                    .collect::<Result<_, _>>()?;
                if xs.len() != 3 {
                    return Err(bad(ln, "vertex needs 3 coordinates"));
                }
                vertices.push([xs[0], xs[1], xs[2]]);
            }
            Some("f") => {
                let idx: Vec<usize> = it
                    .map(|t| {
                        t.split('/')
                            .next()
                            .and_then(|s| s.parse::<usize>().ok())
                            .filter(|&i| i >= 1)
                            .ok_or_else(|| bad(ln, "bad face index"))
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() != 3 {
                    return Err(bad(ln, "only triangles are supported"));
                }
                if objects.is_empty() {
                    objects.push(Pending {
                        name: String::new(),
                        first_vertex: 0,
                        faces: Vec::new(),
                    });
                }
                objects
                    .last_mut()
                    .unwrap()
                    .faces
                    .push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
            }
            _ => {}
        }
    }
    let ends: Vec<usize> = objects
        .iter()
        .skip(1)
        .map(|o| o.first_vertex)
        .chain(std::iter::once(vertices.len()))
        .collect();
    objects
        .into_iter()
        .zip(ends)
        .map(|(o, end)| {
            let verts = vertices[o.first_vertex..end].to_vec();
            let faces = o
                .faces
                .iter()
                .map(|f| {
                    let local = f.map(|i| i.wrapping_sub(o.first_vertex));
                    if local.iter().any(|&i| i >= verts.len()) {
                        Err(GeometryError::Obj(format!(
                            "object {:?} references a vertex outside its block",
                            o.name
                        )))
                    } else {
                        Ok(local)
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok((o.name, TriangleMesh::new(verts, faces)?))
        })
        .collect()
}

pub fn write_obj(path: &Path, meshes: &[TriangleMesh]) -> Result<(), GeometryError> {
    std::fs::write(path, to_obj(meshes))
        .map_err(|e| GeometryError::Obj(format!("{}: {e}", path.display())))
}

pub fn read_obj(path: &Path) -> Result<Vec<(String, TriangleMesh)>, GeometryError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GeometryError::Obj(format!("{}: {e}", path.display())))?;
    parse_obj(&text)
}

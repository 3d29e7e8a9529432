//! On-disk dataset layout. All paths in the manifest are relative to the
//! directory holding `manifest.json`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DatasetError, Pose, Skeleton};
use crate::geometry::{obj, Camera, TriangleMesh};
use crate::grad::Tensor;
use crate::render::image::{read_mask_png, read_rgb_png};
use crate::render::LightRig;

pub const MANIFEST_VERSION: u32 = 1;
/// Provenance written next to the manifest by the command line; not data.
pub const RUN_RECORD_NAME: &str = "run.json";
pub const MANIFEST_NAME: &str = "manifest.json";

/// Camera parameters shared by every image; only the azimuth varies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub elevation: f64,
    pub distance: f64,
    pub focal: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub image: String,
    pub mask: String,
    pub azimuth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadViewEntries {
    pub a0: ViewEntry,
    pub a1: ViewEntry,
    pub b0: ViewEntry,
    pub b1: ViewEntry,
}

impl QuadViewEntries {
    /// Views in `a0, a1, b0, b1` order.
    pub fn ordered(&self) -> [&ViewEntry; 4] {
        [&self.a0, &self.a1, &self.b0, &self.b1]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadRecord {
    pub subject: usize,
    pub pose_a: usize,
    pub pose_b: usize,
    pub views: QuadViewEntries,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub id: usize,
    pub skeleton: Skeleton,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseEntry {
    pub id: usize,
    pub subject: usize,
    pub angles: Pose,
}

/// One held-out pose seen from several viewpoints, with its world-frame
/// ground-truth meshes (one OBJ object per segment).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestSample {
    pub id: usize,
    pub subject: usize,
    pub pose: usize,
    pub mesh: String,
    pub views: Vec<ViewEntry>,
}

/// The test image whose shape latent stands for a subject in the hard
/// protocol.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalEntry {
    pub subject: usize,
    pub sample: usize,
    pub view: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub image_size: usize,
    pub camera: CameraSpec,
    pub lights: LightRig,
    /// Side of the cubic voxel volume centered at the origin.
    pub voxel_extent: f64,
    pub subjects: Vec<SubjectEntry>,
    pub poses: Vec<PoseEntry>,
    pub records: Vec<QuadRecord>,
    pub test: Vec<TestSample>,
    pub canonical: Vec<CanonicalEntry>,
}

/// An image as a `[3, H, W]` tensor and its background indicator `[H, W]`
/// (1 where the mask is empty).
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedView {
    pub image: Tensor,
    pub background: Tensor,
    pub camera: Camera,
}

impl Manifest {
    pub fn camera(&self, azimuth: f64) -> Result<Camera, DatasetError> {
        Ok(Camera::new(
            azimuth,
            self.camera.elevation,
            self.camera.distance,
            self.camera.focal,
            self.image_size,
            self.image_size,
        )?)
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf, DatasetError> {
        let path = dir.join(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(self).map_err(|e| DatasetError::io(&path, e))?;
        std::fs::write(&path, text + "\n").map_err(|e| DatasetError::io(&path, e))?;
        Ok(path)
    }

    /// Read a manifest from a file or from a directory containing one.
    pub fn load(path: &Path) -> Result<(Self, PathBuf), DatasetError> {
        let file = if path.is_dir() {
            path.join(MANIFEST_NAME)
        } else {
            path.to_path_buf()
        };
        let text = std::fs::read_to_string(&file).map_err(|e| DatasetError::io(&file, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| DatasetError::io(&file, e))?;
        if m.version != MANIFEST_VERSION {
            return Err(DatasetError::Manifest(format!(
                "version {} is not supported (expected {MANIFEST_VERSION})",
                m.version
            )));
        }
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((m, root))
    }

    pub fn load_view(&self, root: &Path, view: &ViewEntry) -> Result<LoadedView, DatasetError> {
        let (w, h, rgb) = read_rgb_png(&root.join(&view.image))?;
        let (mw, mh, mask) = read_mask_png(&root.join(&view.mask))?;
        let n = self.image_size;
        if (w, h) != (n, n) || (mw, mh) != (n, n) {
            return Err(DatasetError::Manifest(format!(
                "{}: expected {n}x{n}, image {w}x{h}, mask {mw}x{mh}",
                view.image
            )));
        }
        let bg = mask.iter().map(|&m| if m { 0.0 } else { 1.0 }).collect();
        Ok(LoadedView {
            image: Tensor::new([3, n, n], rgb).expect("sizes checked"),
            background: Tensor::new([n, n], bg).expect("sizes checked"),
            camera: self.camera(view.azimuth)?,
        })
    }

    /// Ground-truth world meshes of a test sample, one per segment.
    pub fn load_meshes(&self, root: &Path, sample: &TestSample) -> Result<Vec<TriangleMesh>, DatasetError> {
        Ok(obj::read_obj(&root.join(&sample.mesh))?
            .into_iter()
            .map(|(_, m)| m)
            .collect())
    }

    pub fn canonical_for(&self, subject: usize) -> Result<CanonicalEntry, DatasetError> {
        self.canonical
            .iter()
            .find(|c| c.subject == subject)
            .copied()
            .ok_or_else(|| DatasetError::Manifest(format!("subject {subject} has no canonical image")))
    }

    /// Every relative path the manifest references, sorted.
    pub fn referenced_files(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut add = |v: &ViewEntry| {
            out.insert(v.image.clone());
            out.insert(v.mask.clone());
        };
        for r in &self.records {
            r.views.ordered().into_iter().for_each(&mut add);
        }
        for t in &self.test {
            t.views.iter().for_each(&mut add);
        }
        for t in &self.test {
            out.insert(t.mesh.clone());
        }
        out
    }

    /// Check that every referenced file exists and that no other file sits
    /// in the dataset directory besides the manifest and its run record.
    pub fn check_complete(&self, root: &Path) -> Result<(), DatasetError> {
        let refs = self.referenced_files();
        for f in &refs {
            if !root.join(f).is_file() {
                return Err(DatasetError::Manifest(format!("missing file {f}")));
            }
        }
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in std::fs::read_dir(&dir).map_err(|e| DatasetError::io(&dir, e))? {
                let p = entry.map_err(|e| DatasetError::io(&dir, e))?.path();
                if p.is_dir() {
                    stack.push(p);
                    continue;
                }
                let rel = p
                    .strip_prefix(root)
                    .expect("walk stays under root")
                    .to_string_lossy()
                    .replace('\\', "/");
                if rel != MANIFEST_NAME && rel != RUN_RECORD_NAME && !refs.contains(&rel) {
                    return Err(DatasetError::Manifest(format!("unreferenced file {rel}")));
                }
            }
        }
        Ok(())
    }
}

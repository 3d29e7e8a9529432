use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{
    CameraSpec, CanonicalEntry, Manifest, PoseEntry, QuadRecord, QuadViewEntries, SubjectEntry,
    TestSample, ViewEntry, MANIFEST_NAME, MANIFEST_VERSION,
};
use super::{make_subject, sample_pose, DatasetError, Skeleton, SubjectRanges};
use crate::geometry::{obj, Camera, TriangleMesh};
use crate::render::image::{write_mask_png, write_rgb_png};
use crate::render::{rasterize, LightRig, RenderOutput, RenderSettings};

const SUBDIRS: [&str; 3] = ["train", "test", "meshes"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub subjects: usize,
    pub quadruplets: usize,
    /// Held-out poses per subject.
    pub test_poses: usize,
    /// Viewpoints per held-out pose.
    pub test_views: usize,
    pub image_size: usize,
    pub seed: u64,
    pub camera: CameraSpec,
    /// Minimum angle between the two viewpoints of a training pose.
    pub min_separation: f64,
    pub ranges: SubjectRanges,
    pub lights: LightRig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            subjects: 3,
            quadruplets: 300,
            test_poses: 10,
            test_views: 2,
            image_size: 64,
            seed: 0,
            camera: CameraSpec {
                elevation: 0.2,
                distance: 6.0,
                focal: 2.6,
            },
            min_separation: 20f64.to_radians(),
            ranges: SubjectRanges::default(),
            lights: LightRig::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::Config(m.to_string()));
        if self.quadruplets == 0 {
            return bad("empty dataset");
        }
        if self.subjects == 0 {
            return bad("at least one subject is required");
        }
        if self.test_poses == 0 || self.test_views == 0 {
            return bad("test split needs at least one pose and one view");
        }
        if self.image_size < 8 {
            return bad("image size must be at least 8");
        }
        if !(0.0..std::f64::consts::PI).contains(&self.min_separation) {
            return bad("minimum separation must lie in [0, π)");
        }
        self.lights.validate()?;
        Camera::new(
            0.0,
            self.camera.elevation,
            self.camera.distance,
            self.camera.focal,
            self.image_size,
            self.image_size,
        )?;
        Ok(())
    }
}

/// Circular distance between two azimuths, in `[0, π]`.
pub fn azimuth_separation(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

fn azimuth_pair(rng: &mut impl Rng, min_sep: f64) -> (f64, f64) {
    let a = rng.random_range(0.0..TAU);
    loop {
        let b = rng.random_range(0.0..TAU);
        if azimuth_separation(a, b) >= min_sep {
            return (a, b);
        }
    }
}

/// Render world meshes with the dataset conventions.
pub fn render_sample(
    meshes: &[TriangleMesh],
    camera: &Camera,
    lights: &LightRig,
) -> Result<RenderOutput, DatasetError> {
    Ok(rasterize(meshes, camera, lights, &RenderSettings::default())?)
}

#[derive(Debug)]
pub struct GeneratedDataset {
    pub manifest: Manifest,
    pub root: PathBuf,
    pub manifest_path: PathBuf,
}

struct Writer<'a> {
    root: &'a Path,
    manifest_camera: CameraSpec,
    size: usize,
    lights: LightRig,
}

impl Writer<'_> {
    fn view(&self, meshes: &[TriangleMesh], azimuth: f64, stem: &str) -> Result<ViewEntry, DatasetError> {
        let c = self.manifest_camera;
        let cam = Camera::new(azimuth, c.elevation, c.distance, c.focal, self.size, self.size)?;
        let out = render_sample(meshes, &cam, &self.lights)?;
        let image = format!("{stem}.png");
        let mask = format!("{stem}_mask.png");
        let bits: Vec<bool> = out.silhouette.iter().map(|&s| s > 0.5).collect();
        write_rgb_png(&self.root.join(&image), self.size, self.size, &out.rgb)?;
        write_mask_png(&self.root.join(&mask), self.size, self.size, &bits)?;
        Ok(ViewEntry { image, mask, azimuth })
    }
}

fn prepare_dir(root: &Path) -> Result<(), DatasetError> {
    if root.exists() {
        let nonempty = std::fs::read_dir(root)
            .map_err(|e| DatasetError::io(root, e))?
            .next()
            .is_some();
        if nonempty && !root.join(MANIFEST_NAME).is_file() {
            return Err(DatasetError::io(root, "output directory is not empty and holds no dataset"));
        }
        // regenerate over a previous dataset
        for d in SUBDIRS {
            let p = root.join(d);
            if p.exists() {
                std::fs::remove_dir_all(&p).map_err(|e| DatasetError::io(&p, e))?;
            }
        }
    }
    for d in SUBDIRS {
        let p = root.join(d);
        std::fs::create_dir_all(&p).map_err(|e| DatasetError::io(&p, e))?;
    }
    Ok(())
}

fn max_abs_coord(meshes: &[TriangleMesh]) -> f64 {
    meshes
        .iter()
        .flat_map(|m| m.vertices().iter().flatten())
        .fold(0.0f64, |a, &x| a.max(x.abs()))
}

/// Generate subjects, training quadruplets and held-out test samples under
/// `root`, then write the manifest.
pub fn generate_dataset(config: &DatasetConfig, root: &Path) -> Result<GeneratedDataset, DatasetError> {
    config.validate()?;
    prepare_dir(root)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let skeletons: Vec<Skeleton> = (0..config.subjects)
        .map(|_| make_subject(rng.random(), &config.ranges))
        .collect();
    let writer = Writer {
        root,
        manifest_camera: config.camera,
        size: config.image_size,
        lights: config.lights,
    };

    let mut poses = Vec::new();
    let mut extent = 0.0f64;
    let mut new_pose = |subject: usize, rng: &mut ChaCha8Rng| -> Result<(usize, Vec<TriangleMesh>), DatasetError> {
        let angles = sample_pose(&skeletons[subject], rng);
        let meshes = skeletons[subject].pose(&angles)?.world_meshes();
        extent = extent.max(max_abs_coord(&meshes));
        let id = poses.len();
        poses.push(PoseEntry { id, subject, angles });
        Ok((id, meshes))
    };

    let mut records = Vec::with_capacity(config.quadruplets);
    for r in 0..config.quadruplets {
        let subject = r % config.subjects;
        let (pose_a, mesh_a) = new_pose(subject, &mut rng)?;
        let (pose_b, mesh_b) = new_pose(subject, &mut rng)?;
        let (a0, a1) = azimuth_pair(&mut rng, config.min_separation);
        let (b0, b1) = azimuth_pair(&mut rng, config.min_separation);
        let stem = |k: &str| format!("train/r{r:05}_{k}");
        let views = QuadViewEntries {
            a0: writer.view(&mesh_a, a0, &stem("a0"))?,
            a1: writer.view(&mesh_a, a1, &stem("a1"))?,
            b0: writer.view(&mesh_b, b0, &stem("b0"))?,
            b1: writer.view(&mesh_b, b1, &stem("b1"))?,
        };
        records.push(QuadRecord {
            subject,
            pose_a,
            pose_b,
            views,
        });
    }

    let mut test = Vec::new();
    let mut canonical = Vec::new();
    for subject in 0..config.subjects {
        for _ in 0..config.test_poses {
            let id = test.len();
            let (pose, meshes) = new_pose(subject, &mut rng)?;
            let mesh = format!("meshes/t{id:05}.obj");
            let named: Vec<(String, &TriangleMesh)> = skeletons[subject]
                .segments
                .iter()
                .map(|s| s.name.clone())
                .zip(&meshes)
                .collect();
            let path = root.join(&mesh);
            std::fs::write(&path, obj::to_obj_named(&named)).map_err(|e| DatasetError::io(&path, e))?;
            let views = (0..config.test_views)
                .map(|k| {
                    let az = rng.random_range(0.0..TAU);
                    writer.view(&meshes, az, &format!("test/t{id:05}_v{k}"))
                })
                .collect::<Result<Vec<_>, _>>()?;
            if canonical.iter().all(|c: &CanonicalEntry| c.subject != subject) {
                canonical.push(CanonicalEntry {
                    subject,
                    sample: id,
                    view: 0,
                });
            }
            test.push(TestSample {
                id,
                subject,
                pose,
                mesh,
                views,
            });
        }
    }

    let manifest = Manifest {
        version: MANIFEST_VERSION,
        image_size: config.image_size,
        camera: config.camera,
        lights: config.lights,
        voxel_extent: 1.2 * 2.0 * extent,
        subjects: skeletons
            .into_iter()
            .enumerate()
            .map(|(id, skeleton)| SubjectEntry { id, skeleton })
            .collect(),
        poses,
        records,
        test,
        canonical,
    };
    let manifest_path = manifest.save(root)?;
    Ok(GeneratedDataset {
        manifest,
        root: root.to_path_buf(),
        manifest_path,
    })
}

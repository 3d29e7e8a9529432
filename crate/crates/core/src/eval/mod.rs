//! Voxel IoU of reconstructed part unions against ground truth, under the
//! standard protocol (each image's own latent) and the hard protocol
//! (part shapes frozen from one canonical image per subject).

mod voxel;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, Manifest, PosedFigure, TestSample};
use crate::geometry::{vec3, Camera, GeometryError, TriangleMesh};
use crate::grad::Tensor;
use crate::model::{Cerberus, LatentBundle, ModelError};

pub use voxel::{
    iou, union_iou, voxelize, voxelize_union, winding_number, GridSpec, VoxelGrid,
    BENCHMARK_RESOLUTION,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("mesh is not closed: edge ({a}, {b}) has {faces} faces")]
    OpenMesh { a: usize, b: usize, faces: usize },
    #[error("subject {0} has no canonical image")]
    NoCanonical(usize),
    #[error("test sample {sample} view {view}: {message}")]
    Sample {
        sample: usize,
        view: usize,
        message: String,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Standard,
    Hard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub sample: usize,
    pub view: usize,
    pub subject: usize,
    pub iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    /// Free-form model label, e.g. `cerberus`, `free` or `oracle`.
    pub model: String,
    pub mean_iou: f64,
    pub samples: Vec<SampleScore>,
}

impl EvalReport {
    fn new(protocol: Protocol, model: &str, samples: Vec<SampleScore>) -> Self {
        let mean_iou = if samples.is_empty() {
            0.0
        } else {
            samples.iter().map(|s| s.iou).sum::<f64>() / samples.len() as f64
        };
        Self {
            protocol,
            model: model.to_string(),
            mean_iou,
            samples,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("sample,view,subject,iou\n");
        for r in &self.samples {
            let _ = writeln!(s, "{},{},{},{}", r.sample, r.view, r.subject, r.iou);
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut by_subject: Vec<(usize, f64, usize)> = Vec::new();
        for r in &self.samples {
            match by_subject.iter_mut().find(|e| e.0 == r.subject) {
                Some(e) => {
                    e.1 += r.iou;
                    e.2 += 1;
                }
                None => by_subject.push((r.subject, r.iou, 1)),
            }
        }
        let mut s = format!("protocol {:?}, model {}\n", self.protocol, self.model).to_lowercase();
        let _ = writeln!(s, "{:>8}  {:>7}  {:>8}", "subject", "images", "mean IoU");
        for (subject, sum, n) in by_subject {
            let _ = writeln!(s, "{subject:>8}  {n:>7}  {:>8.4}", sum / n as f64);
        }
        let _ = writeln!(s, "{:>8}  {:>7}  {:>8.4}", "all", self.samples.len(), self.mean_iou);
        s
    }
}

/// One test image with everything a predictor may look at.
pub struct TestView<'a> {
    pub manifest: &'a Manifest,
    pub sample: &'a TestSample,
    pub view: usize,
    pub image: &'a Tensor,
    pub camera: Camera,
}

/// Image → per-part world meshes, split into an encoding step and an
/// assembly step that may borrow part shapes from another encoding.
pub trait Predictor {
    type Code;

    fn encode(&self, view: &TestView) -> Result<Self::Code, EvalError>;

    /// World meshes with placements from `own` and part shapes from `shape`.
    fn assemble(&self, own: &Self::Code, shape: &Self::Code, camera: &Camera) -> Result<Vec<TriangleMesh>, EvalError>;
}

impl Predictor for Cerberus {
    type Code = LatentBundle;

    fn encode(&self, view: &TestView) -> Result<LatentBundle, EvalError> {
        Ok(Cerberus::encode(self, view.image)?)
    }

    fn assemble(&self, own: &LatentBundle, shape: &LatentBundle, camera: &Camera) -> Result<Vec<TriangleMesh>, EvalError> {
        Ok(Cerberus::assemble(self, own, &shape.shape_latent, camera)?.world_meshes())
    }
}

/// Reads the ground truth: segment capsules are the part shapes, joint
/// placements are the poses.
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    type Code = PosedFigure;

    fn encode(&self, view: &TestView) -> Result<PosedFigure, EvalError> {
        let m = view.manifest;
        let skel = &m.subjects[view.sample.subject].skeleton;
        Ok(skel.pose(&m.poses[view.sample.pose].angles)?)
    }

    fn assemble(&self, own: &PosedFigure, shape: &PosedFigure, _: &Camera) -> Result<Vec<TriangleMesh>, EvalError> {
        Ok(shape
            .local
            .iter()
            .zip(own.rotations.iter().zip(&own.positions))
            .map(|(m, (r, p))| m.map_vertices(|v| vec3::add(vec3::mat_vec(r, v), *p)))
            .collect())
    }
}

struct Loaded {
    sample: usize,
    view: usize,
    image: Tensor,
    camera: Camera,
}

fn load_all(manifest: &Manifest, root: &Path) -> Result<Vec<Loaded>, EvalError> {
    let mut out = Vec::new();
    for (si, s) in manifest.test.iter().enumerate() {
        for (vi, v) in s.views.iter().enumerate() {
            let l = manifest.load_view(root, v)?;
            out.push(Loaded {
                sample: si,
                view: vi,
                image: l.image,
                camera: l.camera,
            });
        }
    }
    Ok(out)
}

fn view_of<'a>(manifest: &'a Manifest, l: &'a Loaded) -> TestView<'a> {
    TestView {
        manifest,
        sample: &manifest.test[l.sample],
        view: l.view,
        image: &l.image,
        camera: l.camera,
    }
}

fn tag(manifest: &Manifest, l: &Loaded, e: EvalError) -> EvalError {
    match e {
        EvalError::NoCanonical(_) => e,
        other => EvalError::Sample {
            sample: manifest.test[l.sample].id,
            view: l.view,
            message: other.to_string(),
        },
    }
}

fn score<P: Predictor>(
    predictor: &P,
    manifest: &Manifest,
    root: &Path,
    protocol: Protocol,
    label: &str,
) -> Result<EvalReport, EvalError> {
    let spec = GridSpec::benchmark(manifest.voxel_extent);
    let views = load_all(manifest, root)?;
    let mut canon = Vec::new();
    if protocol == Protocol::Hard {
        for subject in 0..manifest.subjects.len() {
            let c = manifest.canonical_for(subject).map_err(|_| EvalError::NoCanonical(subject))?;
            let l = views
                .iter()
                .find(|l| manifest.test[l.sample].id == c.sample && l.view == c.view)
                .ok_or(EvalError::NoCanonical(subject))?;
            canon.push((subject, predictor.encode(&view_of(manifest, l)).map_err(|e| tag(manifest, l, e))?));
        }
    }

    let mut gt_cache: Vec<Option<VoxelGrid>> = vec![None; manifest.test.len()];
    let mut samples = Vec::with_capacity(views.len());
    for l in &views {
        let s = &manifest.test[l.sample];
        if gt_cache[l.sample].is_none() {
            gt_cache[l.sample] = Some(voxelize_union(&manifest.load_meshes(root, s)?, spec)?);
        }
        let own = predictor.encode(&view_of(manifest, l)).map_err(|e| tag(manifest, l, e))?;
        let shape = match protocol {
            Protocol::Standard => &own,
            Protocol::Hard => {
                &canon
                    .iter()
                    .find(|(subj, _)| *subj == s.subject)
                    .ok_or(EvalError::NoCanonical(s.subject))?
                    .1
            }
        };
        let meshes = predictor.assemble(&own, shape, &l.camera).map_err(|e| tag(manifest, l, e))?;
        let pred = voxelize_union(&meshes, spec).map_err(|e| tag(manifest, l, e))?;
        samples.push(SampleScore {
            sample: s.id,
            view: l.view,
            subject: s.subject,
            iou: iou(&pred, gt_cache[l.sample].as_ref().expect("filled above"))?,
        });
    }
    Ok(EvalReport::new(protocol, label, samples))
}

/// Every test image reconstructed from its own encoding.
pub fn eval_standard<P: Predictor>(predictor: &P, manifest: &Manifest, root: &Path, label: &str) -> Result<EvalReport, EvalError> {
    score(predictor, manifest, root, Protocol::Standard, label)
}

/// Part shapes from each subject's canonical image, rotations and
/// translations from each image's own encoding.
pub fn eval_hard<P: Predictor>(predictor: &P, manifest: &Manifest, root: &Path, label: &str) -> Result<EvalReport, EvalError> {
    score(predictor, manifest, root, Protocol::Hard, label)
}

pub fn evaluate<P: Predictor>(
    predictor: &P,
    manifest: &Manifest,
    root: &Path,
    protocol: Protocol,
    label: &str,
) -> Result<EvalReport, EvalError> {
    score(predictor, manifest, root, protocol, label)
}

//! Jointed stick figures meshed as one capsule per segment.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::capsule::capsule;
use super::DatasetError;
use crate::geometry::vec3::{self, Mat3, Vec3};
use crate::geometry::TriangleMesh;

/// One rigid segment. Its capsule runs along local +Z from the joint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub parent: Option<usize>,
    pub length: f64,
    pub radius: f64,
    /// Joint position in the parent's frame (world position for the root).
    pub attach: Vec3,
    /// Rest orientation relative to the parent frame.
    pub rest: Mat3,
    /// Inclusive angle limits for rotations about local x, y, z.
    pub limits: [(f64, f64); 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub segments: Vec<Segment>,
}

/// Uniform ranges `(lo, hi)` for one segment type.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentRange {
    pub length: (f64, f64),
    pub radius: (f64, f64),
}

/// Length and radius ranges of the default topology, by segment type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectRanges {
    pub pelvis: SegmentRange,
    pub chest: SegmentRange,
    pub head: SegmentRange,
    pub upper_arm: SegmentRange,
    pub forearm: SegmentRange,
    pub thigh: SegmentRange,
    pub shin: SegmentRange,
}

impl Default for SubjectRanges {
    fn default() -> Self {
        let r = |l: (f64, f64), r: (f64, f64)| SegmentRange { length: l, radius: r };
        Self {
            pelvis: r((0.30, 0.40), (0.30, 0.38)),
            chest: r((0.55, 0.75), (0.34, 0.42)),
            head: r((0.10, 0.20), (0.22, 0.28)),
            upper_arm: r((0.50, 0.65), (0.14, 0.18)),
            forearm: r((0.45, 0.60), (0.12, 0.16)),
            thigh: r((0.60, 0.75), (0.17, 0.22)),
            shin: r((0.55, 0.70), (0.14, 0.18)),
        }
    }
}

impl SubjectRanges {
    /// Range of the segment at `index` in the default topology.
    pub fn for_segment(&self, index: usize) -> SegmentRange {
        match index {
            0 => self.pelvis,
            1 => self.chest,
            2 => self.head,
            3 | 5 => self.upper_arm,
            4 | 6 => self.forearm,
            7 | 9 => self.thigh,
            _ => self.shin,
        }
    }
}

pub(crate) fn rot_x(a: f64) -> Mat3 {
    vec3::axis_angle([1.0, 0.0, 0.0], a)
}

fn rot_y(a: f64) -> Mat3 {
    vec3::axis_angle([0.0, 1.0, 0.0], a)
}

fn rot_z(a: f64) -> Mat3 {
    vec3::axis_angle([0.0, 0.0, 1.0], a)
}

/// Joint rotation `Rz(γ) · Ry(β) · Rx(α)`.
pub fn joint_rotation(angles: [f64; 3]) -> Mat3 {
    vec3::mat_mul(&rot_z(angles[2]), &vec3::mat_mul(&rot_y(angles[1]), &rot_x(angles[0])))
}

/// Torso (pelvis + chest), head and four two-segment limbs: 11 segments.
/// Segment sizes are drawn from `ranges`; left and right limbs match.
pub fn make_subject(seed: u64, ranges: &SubjectRanges) -> Skeleton {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |r: SegmentRange| {
        (
            rng.random_range(r.length.0..=r.length.1),
            rng.random_range(r.radius.0..=r.radius.1),
        )
    };
    let pelvis = draw(ranges.pelvis);
    let chest = draw(ranges.chest);
    let head = draw(ranges.head);
    let upper = draw(ranges.upper_arm);
    let fore = draw(ranges.forearm);
    let thigh = draw(ranges.thigh);
    let shin = draw(ranges.shin);

    let fixed = [(0.0, 0.0); 3];
    let seg = |name: &str, parent, (length, radius): (f64, f64), attach, rest, limits| Segment {
        name: name.to_string(),
        parent,
        length,
        radius,
        attach,
        rest,
        limits,
    };
    let id = vec3::IDENTITY;
    let shoulder = chest.1 + 0.5 * upper.1;
    let shoulder_z = 0.85 * chest.0;
    let hip = 0.55 * pelvis.1;
    let arm = [(-1.2, 1.2), (-1.2, 1.2), (0.0, 0.0)];
    let elbow = [(0.0, 2.0), (0.0, 0.0), (0.0, 0.0)];
    let leg = [(-0.6, 0.6), (-1.3, 0.5), (0.0, 0.0)];
    let knee = [(0.0, 0.0), (0.0, 1.8), (0.0, 0.0)];
    Skeleton {
        segments: vec![
            seg("pelvis", None, pelvis, [0.0; 3], id, fixed),
            seg("chest", Some(0), chest, [0.0, 0.0, pelvis.0], id, [(-0.3, 0.3), (-0.4, 0.4), (-0.5, 0.5)]),
            seg("head", Some(1), head, [0.0, 0.0, chest.0 + 0.6 * head.1], id, [(-0.4, 0.4), (-0.4, 0.4), (0.0, 0.0)]),
            seg("upper_arm_l", Some(1), upper, [0.0, shoulder, shoulder_z], rot_x(-FRAC_PI_2), arm),
            seg("forearm_l", Some(3), fore, [0.0, 0.0, upper.0], id, elbow),
            seg("upper_arm_r", Some(1), upper, [0.0, -shoulder, shoulder_z], rot_x(FRAC_PI_2), arm),
            seg("forearm_r", Some(5), fore, [0.0, 0.0, upper.0], id, elbow),
            seg("thigh_l", Some(0), thigh, [0.0, hip, 0.0], rot_x(PI), leg),
            seg("shin_l", Some(7), shin, [0.0, 0.0, thigh.0], id, knee),
            seg("thigh_r", Some(0), thigh, [0.0, -hip, 0.0], rot_x(PI), leg),
            seg("shin_r", Some(9), shin, [0.0, 0.0, thigh.0], id, knee),
        ],
    }
}

/// Joint angles of one pose, per segment.
pub type Pose = Vec<[f64; 3]>;

/// Joint angles drawn from a normal centered on the rest pose (clamped into
/// the limits) with a standard deviation of a quarter of the range, redrawn
/// until they fall inside the limits. Poses stay mostly near rest with
/// occasional strong bends, rather than spreading uniformly to the extremes.
pub fn sample_pose(skel: &Skeleton, rng: &mut impl Rng) -> Pose {
    skel.segments
        .iter()
        .map(|s| {
            s.limits.map(|(lo, hi)| {
                if hi <= lo {
                    return lo;
                }
                let normal = Normal::new(0.0f64.clamp(lo, hi), 0.25 * (hi - lo)).expect("positive width");
                loop {
                    let a = normal.sample(rng);
                    if (lo..=hi).contains(&a) {
                        break a;
                    }
                }
            })
        })
        .collect()
}

/// Capsule meshes of a posed skeleton.
#[derive(Clone, Debug, PartialEq)]
pub struct PosedFigure {
    /// Segment-local capsules; identical for every pose of a subject.
    pub local: Vec<TriangleMesh>,
    pub rotations: Vec<Mat3>,
    pub positions: Vec<Vec3>,
}

impl PosedFigure {
    pub fn world_meshes(&self) -> Vec<TriangleMesh> {
        self.local
            .iter()
            .zip(self.rotations.iter().zip(&self.positions))
            .map(|(m, (r, p))| m.map_vertices(|v| vec3::add(vec3::mat_vec(r, v), *p)))
            .collect()
    }
}

impl Skeleton {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.segments.first().is_none_or(|s| s.parent.is_some()) {
            return Err(DatasetError::Skeleton("segment 0 must be the only root".into()));
        }
        for (i, s) in self.segments.iter().enumerate().skip(1) {
            match s.parent {
                Some(p) if p < i => {}
                _ => {
                    return Err(DatasetError::Skeleton(format!(
                        "segment {i} must have an earlier parent"
                    )))
                }
            }
        }
        if self.segments.iter().any(|s| !(s.length > 0.0 && s.radius > 0.0)) {
            return Err(DatasetError::Skeleton("lengths and radii must be positive".into()));
        }
        Ok(())
    }

    /// Segment-local capsules (pose independent).
    pub fn local_meshes(&self) -> Vec<TriangleMesh> {
        self.segments.iter().map(|s| capsule(s.length, s.radius)).collect()
    }

    /// World rotation and joint position of every segment.
    pub fn forward_kinematics(&self, pose: &Pose) -> Result<(Vec<Mat3>, Vec<Vec3>), DatasetError> {
        self.validate()?;
        if pose.len() != self.segments.len() {
            return Err(DatasetError::Pose(format!(
                "{} joint triples for {} segments",
                pose.len(),
                self.segments.len()
            )));
        }
        let mut rots: Vec<Mat3> = Vec::with_capacity(pose.len());
        let mut pos: Vec<Vec3> = Vec::with_capacity(pose.len());
        for (i, (s, angles)) in self.segments.iter().zip(pose).enumerate() {
            for (axis, (&a, &(lo, hi))) in angles.iter().zip(&s.limits).enumerate() {
                if !(lo - 1e-12..=hi + 1e-12).contains(&a) {
                    return Err(DatasetError::Pose(format!(
                        "{} axis {axis} angle {a} outside [{lo}, {hi}]",
                        s.name
                    )));
                }
            }
            let local = vec3::mat_mul(&s.rest, &joint_rotation(*angles));
            let (r, p) = match s.parent {
                None => (local, s.attach),
                Some(j) => (
                    vec3::mat_mul(&rots[j], &local),
                    vec3::add(pos[j], vec3::mat_vec(&rots[j], s.attach)),
                ),
            };
            debug_assert_eq!(rots.len(), i);
            rots.push(r);
            pos.push(p);
        }
        Ok((rots, pos))
    }

    pub fn pose(&self, pose: &Pose) -> Result<PosedFigure, DatasetError> {
        let (rotations, positions) = self.forward_kinematics(pose)?;
        Ok(PosedFigure {
            local: self.local_meshes(),
            rotations,
            positions,
        })
    }

    pub fn rest_pose(&self) -> Pose {
        vec![[0.0; 3]; self.segments.len()]
    }
}

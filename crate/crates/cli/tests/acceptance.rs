//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 6 and 7 train two desk-scale models through the `derender`
//! binary, which takes roughly half an hour on one core. Set
//! `DERENDER_ACCEPTANCE_SKIP_TRAINING=1` to report them as SKIP instead.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::rc::Rc;
use std::time::{Duration, Instant};

use derender_core::dataset::Manifest;
use derender_core::eval::{iou, union_iou, voxelize, voxelize_union, GridSpec};
use derender_core::geometry::{icosphere, vec3, Camera, EdgeWing, TriangleMesh, Vec3};
use derender_core::grad::gradcheck::{analytic, max_relative_error, numeric, relative_error};
use derender_core::grad::{GradError, Graph, Tensor, Var};
use derender_core::losses::{
    background_loss, draw_mix, mix_shape_latents, mix_with, mse_reconstruction, quadruplet_loss,
    smoothness_energy, smoothness_loss, translation_consistency, translation_consistency_total,
    LossWeights, QuadViews, SmoothnessOp,
};
use derender_core::model::{translations_on_tape, Cerberus, EncoderConfig};
use derender_core::render::{rasterize_points, LightRig, RasterOp, RenderSettings};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of one criterion: pass flag plus the measured values.
struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

enum Status {
    Done(Verdict),
    Skipped(String),
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_derender")
}

fn run_cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(bin()).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    random(rng, shape, -1.0, 1.0).map(|x| if x >= 0.0 { x + 0.1 } else { x - 0.1 })
}

// ---------------------------------------------------------------- 1

fn icosphere_counts() -> Verdict {
    let t = Instant::now();
    let two = icosphere(2).unwrap();
    let mut euler = Vec::new();
    for level in 0..=4 {
        let m = icosphere(level).unwrap();
        let edges: BTreeSet<(usize, usize)> = m
            .faces()
            .iter()
            .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        euler.push(m.vertex_count() as i64 - edges.len() as i64 + m.face_count() as i64);
    }
    let secs = t.elapsed().as_secs_f64();
    Verdict::new(
        two.vertex_count() == 162 && two.face_count() == 320 && euler.iter().all(|&x| x == 2) && secs < 1.0,
        format!(
            "level 2: {} vertices, {} faces; Euler characteristic {euler:?}; {secs:.3}s",
            two.vertex_count(),
            two.face_count()
        ),
    )
}

// ---------------------------------------------------------------- 2

/// Contract an op's output against fixed weights so every element carries
/// a distinct upstream gradient.
fn contract(g: &mut Graph, y: Var) -> Result<Var, GradError> {
    let n = g.value(y).len();
    let w: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.618 + 0.3).sin()).collect();
    let w = g.constant(Tensor::new(g.shape(y).to_vec(), w)?);
    let prod = g.mul(y, w)?;
    g.sum(prod)
}

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var, GradError>>;

fn builtin_cases() -> Vec<(&'static str, Vec<Tensor>, Build)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let r = &mut rng;
    let frame = [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
    let choice: Vec<u8> = (0..12).map(|i| (i * 7 % 3) as u8).collect();
    let a = random(r, &[3, 4], -1.0, 1.0);
    let b = random(r, &[3, 4], -1.0, 1.0);
    let kinked = away_from_zero(r, &[2, 3, 4]);
    let l = random(r, &[2, 3, 2], -1.0, 1.0);
    let c: Vec<(&'static str, Vec<Tensor>, Build)> = vec![
        ("add", vec![a.clone(), b.clone()], Box::new(|g, v| g.add(v[0], v[1]))),
        ("sub", vec![a.clone(), b.clone()], Box::new(|g, v| g.sub(v[0], v[1]))),
        ("mul", vec![a.clone(), b.clone()], Box::new(|g, v| g.mul(v[0], v[1]))),
        ("add_bias", vec![a.clone(), random(r, &[4], -1.0, 1.0)], Box::new(|g, v| g.add_bias(v[0], v[1]))),
        ("scale", vec![a.clone()], Box::new(|g, v| g.scale(v[0], -1.7))),
        ("add_scalar", vec![a.clone()], Box::new(|g, v| g.add_scalar(v[0], 0.4))),
        ("square", vec![a.clone()], Box::new(|g, v| g.square(v[0]))),
        (
            "matmul",
            vec![random(r, &[3, 5], -1.0, 1.0), random(r, &[5, 2], -1.0, 1.0)],
            Box::new(|g, v| g.matmul(v[0], v[1])),
        ),
        (
            "linear",
            vec![random(r, &[4], -1.0, 1.0), random(r, &[4, 6], -1.0, 1.0), random(r, &[6], -1.0, 1.0)],
            Box::new(|g, v| g.linear(v[0], v[1], v[2])),
        ),
        (
            "conv2d",
            vec![random(r, &[2, 6, 6], -1.0, 1.0), random(r, &[3, 2, 3, 3], -1.0, 1.0), random(r, &[3], -1.0, 1.0)],
            Box::new(|g, v| g.conv2d(v[0], v[1], v[2], 2, 1)),
        ),
        (
            "conv_transpose2d",
            vec![random(r, &[3, 3, 3], -1.0, 1.0), random(r, &[3, 2, 4, 4], -1.0, 1.0), random(r, &[2], -1.0, 1.0)],
            Box::new(|g, v| g.conv_transpose2d(v[0], v[1], v[2], 2, 1)),
        ),
        ("relu", vec![kinked.clone()], Box::new(|g, v| g.relu(v[0]))),
        ("sigmoid", vec![kinked.clone()], Box::new(|g, v| g.sigmoid(v[0]))),
        ("global_avg_pool", vec![kinked.clone()], Box::new(|g, v| g.global_avg_pool(v[0]))),
        ("spatial_softmax", vec![kinked.map(|x| 3.0 * x)], Box::new(|g, v| g.spatial_softmax(v[0]))),
        ("sum", vec![l.clone()], Box::new(|g, v| g.sum(v[0]))),
        ("mean", vec![l.clone()], Box::new(|g, v| g.mean(v[0]))),
        (
            "map_dot",
            vec![l.clone(), random(r, &[3, 2], -1.0, 1.0)],
            Box::new(|g, v| g.map_dot(v[0], v[1])),
        ),
        (
            "concat",
            vec![l.clone(), random(r, &[1, 3, 2], -1.0, 1.0)],
            Box::new(|g, v| g.concat(&[v[0], v[1]])),
        ),
        ("narrow", vec![l.clone()], Box::new(|g, v| g.narrow(v[0], 1, 1))),
        ("reshape", vec![l.clone()], Box::new(|g, v| g.reshape(v[0], &[6, 2]))),
        (
            "select",
            vec![l.clone(), random(r, &[2, 3, 2], -1.0, 1.0), random(r, &[2, 3, 2], -1.0, 1.0)],
            Box::new(move |g, v| g.select(v, &choice)),
        ),
        ("quat_normalize", vec![away_from_zero(r, &[3, 4])], Box::new(|g, v| g.quat_normalize(v[0]))),
        (
            "quat_rotation",
            vec![away_from_zero(r, &[3, 4])],
            Box::new(move |g, v| g.quat_rotation(v[0], frame)),
        ),
        (
            "rigid_transform",
            vec![random(r, &[2, 5, 3], -1.0, 1.0), random(r, &[2, 3, 3], -1.0, 1.0), random(r, &[2, 3], -1.0, 1.0)],
            Box::new(|g, v| g.rigid_transform(v[0], v[1], v[2])),
        ),
    ];
    c
}

fn flatten(meshes: &[TriangleMesh]) -> (Tensor, Vec<[usize; 3]>) {
    let mut points = Vec::new();
    let mut faces = Vec::new();
    for m in meshes {
        let base = points.len();
        points.extend_from_slice(m.vertices());
        faces.extend(m.faces().iter().map(|f| f.map(|i| i + base)));
    }
    let n = points.len();
    (Tensor::new(vec![n, 3], points.into_iter().flatten().collect()).unwrap(), faces)
}

fn as_points(t: &Tensor) -> Vec<Vec3> {
    t.data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

/// Camera-facing triangle in the plane `x = depth`, tilted off the view axis.
fn scene_triangle(rng: &mut ChaCha8Rng, depth: f64) -> TriangleMesh {
    let mut q = || [depth, rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8)];
    let (a, b, c) = (q(), q(), q());
    let n = vec3::cross(vec3::sub(b, a), vec3::sub(c, a));
    let tri = if n[0] < 0.0 { [a, c, b] } else { [a, b, c] };
    let m = TriangleMesh::new(tri.to_vec(), vec![[0, 1, 2]]).unwrap();
    let r = vec3::axis_angle(
        [0.0, rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
        rng.random_range(0.2..0.6),
    );
    let center = m.centroid();
    m.map_vertices(|v| vec3::add(center, vec3::mat_vec(&r, vec3::sub(v, center))))
}

struct RasterCheck {
    err: f64,
    checked: usize,
    interior: usize,
    band: usize,
}

/// Analytic vs central differences on every coordinate whose ±step leaves
/// the per-pixel winning triangles unchanged.
fn raster_gradcheck(meshes: &[TriangleMesh], camera: Camera, weights: Tensor, step: f64) -> RasterCheck {
    let (points, faces) = flatten(meshes);
    let faces = Rc::new(faces);
    let lights = LightRig::default();
    let settings = RenderSettings::default();
    let (out, state) = rasterize_points(&as_points(&points), &faces, &camera, &lights, &settings, None).unwrap();
    let interior = out.silhouette.iter().filter(|&&s| s == 1.0).count();
    let band = out.silhouette.iter().filter(|&&s| s > 0.0 && s < 1.0).count();
    let base = state.coverage_signature();
    let signature = |t: &Tensor| {
        rasterize_points(&as_points(t), &faces, &camera, &lights, &settings, None)
            .unwrap()
            .1
            .coverage_signature()
    };
    let f2 = faces.clone();
    let build = move |g: &mut Graph, v: &[Var]| {
        let op = g.register_custom(Rc::new(RasterOp::new(f2.clone(), camera, lights, settings)))?;
        let img = g.apply_custom(&op, &[v[0]])?;
        let w = g.constant(weights.clone());
        let prod = g.mul(img, w)?;
        g.sum(prod)
    };
    let a = analytic(std::slice::from_ref(&points), &build).unwrap();
    let stable: Vec<usize> = (0..points.len())
        .filter(|&i| {
            [step, -step].iter().all(|&d| {
                let mut q = points.clone();
                q.data_mut()[i] += d;
                signature(&q) == base
            })
        })
        .collect();
    let n = numeric(std::slice::from_ref(&points), 0, Some(&stable), step, &build).unwrap();
    let picked: Vec<f64> = stable.iter().map(|&i| a[0].data()[i]).collect();
    RasterCheck {
        err: relative_error(&picked, &n),
        checked: stable.len(),
        interior,
        band,
    }
}

fn gradient_suite() -> Verdict {
    let t = Instant::now();
    let mut notes = Vec::new();
    let mut pass = true;

    let mut worst_op = ("", 0.0f64);
    let cases = builtin_cases();
    for (name, inputs, build) in &cases {
        let err = max_relative_error(inputs, 1e-5, &|g: &mut Graph, v: &[Var]| {
            let y = build(g, v)?;
            contract(g, y)
        })
        .unwrap();
        if err > worst_op.1 {
            worst_op = (name, err);
        }
    }
    pass &= worst_op.1 < 1e-4;
    notes.push(format!("{} built-in ops worst {:.1e} ({})", cases.len(), worst_op.1, worst_op.0));

    let sphere = icosphere(1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let pts: Vec<f64> = sphere.vertices().iter().flatten().map(|x| x * rng.random_range(0.7..1.3)).collect();
    let op = Rc::new(SmoothnessOp::stacked(&sphere, 1).unwrap());
    let smooth = max_relative_error(
        &[Tensor::new(vec![sphere.vertex_count(), 3], pts).unwrap()],
        1e-6,
        &move |g: &mut Graph, v: &[Var]| {
            let h = g.register_custom(op.clone())?;
            g.apply_custom(&h, &[v[0]])
        },
    )
    .unwrap();
    pass &= smooth < 1e-3;
    notes.push(format!("smoothness {smooth:.1e}"));

    let cam = Camera::new(1.1, -0.2, 4.5, 2.5, 8, 8).unwrap();
    let mut prob = random(&mut rng, &[2, 8, 8], 0.0, 1.0);
    for map in prob.data_mut().chunks_mut(64) {
        let s: f64 = map.iter().sum();
        map.iter_mut().for_each(|x| *x /= s);
    }
    let depth = random(&mut rng, &[2, 8, 8], 2.5, 5.5);
    let w = random(&mut rng, &[2, 3], -1.0, 1.0);
    let trans = max_relative_error(&[prob, depth], 1e-6, &move |g: &mut Graph, v: &[Var]| {
        let t = translations_on_tape(g, v[0], v[1], &cam)?;
        let wv = g.constant(w.clone());
        let m = g.mul(t, wv)?;
        g.sum(m)
    })
    .unwrap();
    pass &= trans < 1e-3;
    notes.push(format!("translation retrieval {trans:.1e}"));

    let camera = Camera::new(0.1, 0.15, 4.0, 2.0, 32, 32).unwrap();
    let (mut worst, mut checked, mut interior, mut band) = (0.0f64, 0, 0, 0);
    for trial in 0..6 {
        let meshes: Vec<TriangleMesh> = (0..1 + trial % 4).map(|k| scene_triangle(&mut rng, -0.3 * k as f64)).collect();
        let weights = random(&mut rng, &[4, 32, 32], -1.0, 1.0);
        let c = raster_gradcheck(&meshes, camera, weights, 1e-5);
        worst = worst.max(c.err);
        checked += c.checked;
        interior += c.interior;
        band += c.band;
    }
    pass &= worst < 1e-3 && checked >= 30 && interior > 0 && band > 0;
    notes.push(format!(
        "rasterizer {worst:.1e} over {checked} stable coordinates ({interior} interior, {band} soft-band pixels)"
    ));

    let secs = t.elapsed().as_secs_f64();
    pass &= secs < 300.0;
    notes.push(format!("{secs:.1}s"));
    Verdict::new(pass, notes.join("; "))
}

// ---------------------------------------------------------------- 3

fn scalar(build: impl FnOnce(&mut Graph) -> Var) -> f64 {
    let mut g = Graph::new();
    let v = build(&mut g);
    g.value(v).item()
}

fn quad_mean_gap() -> f64 {
    let cfg = EncoderConfig {
        channels: vec![2, 3],
        latent: 3,
        parts: 2,
        image_size: 16,
        depth_range: (2.5, 5.5),
        subdivision: 1,
    };
    let model = Cerberus::new(cfg, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let mut g = Graph::new();
    let bound = model.params().bind(&mut g, false);
    let images: Vec<Tensor> = (0..4).map(|_| random(&mut rng, &[3, 16, 16], 0.0, 1.0)).collect();
    let img = |g: &mut Graph, k: usize| g.constant(images[k].clone());
    let latents = [0, 1, 2, 3].map(|k| {
        let v = img(&mut g, k);
        model.encode_on_tape(&mut g, &bound, v).unwrap()
    });
    let views = QuadViews {
        images: [0, 1, 2, 3].map(|k| img(&mut g, k)),
        backgrounds: [0, 1, 2, 3].map(|k| g.constant(Tensor::new(vec![16, 16], vec![(k % 2) as f64; 256]).unwrap())),
        cameras: [0.0, 1.2, 0.3, 1.9].map(|az| Camera::new(az, 0.2, 4.0, 2.0, 16, 16).unwrap()),
        latents,
    };
    let q = quadruplet_loss(
        &mut g,
        &model,
        &bound,
        &views,
        Some(&[1, 3, 0]),
        &LossWeights::default(),
        &LightRig::default(),
        &RenderSettings::default(),
    )
    .unwrap();
    let mean = q.per_view.iter().map(|&v| g.value(v).item()).sum::<f64>() / 4.0;
    (g.value(q.recon).item() - mean).abs()
}

fn loss_identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let image = random(&mut rng, &[3, 8, 8], 0.0, 1.0);
    let recon = scalar(|g| {
        let a = g.constant(image.clone());
        let b = g.constant(image.clone());
        mse_reconstruction(g, a, b).unwrap()
    });

    let t = random(&mut rng, &[5, 3], -2.0, 2.0);
    let pair = scalar(|g| {
        let a = g.constant(t.clone());
        let b = g.constant(t.clone());
        translation_consistency(g, a, b).unwrap()
    });
    let four = scalar(|g| {
        let v = [0, 1, 2, 3].map(|_| g.constant(t.clone()));
        translation_consistency_total(g, v).unwrap()
    });

    let flat = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]];
    let coplanar = smoothness_energy(&flat, &[EdgeWing { a: 0, b: 2, left: 3, right: 1 }]);
    let cube = smoothness_loss(&[TriangleMesh::cuboid([0.0; 3], [1.0; 3])]).unwrap();

    // one-hot probability maps entirely on / entirely off the background
    let (n, h, w) = (3, 4, 5);
    let bg: Vec<f64> = (0..h * w).map(|i| (i < 7) as u8 as f64).collect();
    let mass = |on_bg: bool| {
        let mut p = vec![0.0; n * h * w];
        for k in 0..n {
            p[k * h * w + if on_bg { k } else { 7 + k }] = 1.0;
        }
        scalar(|g| {
            let pv = g.constant(Tensor::new(vec![n, h, w], p).unwrap());
            let bv = g.constant(Tensor::new(vec![h, w], bg.clone()).unwrap());
            background_loss(g, pv, bv).unwrap()
        })
    };
    let (lb_off, lb_on) = (mass(false), mass(true));
    let gap = quad_mean_gap();

    let pass = recon == 0.0
        && pair == 0.0
        && four == 0.0
        && coplanar == 0.0
        && (cube - 12.0).abs() < 1e-12
        && lb_off == 0.0
        && lb_on == 1.0
        && gap < 1e-12;
    Verdict::new(
        pass,
        format!(
            "recon {recon}, translation {pair}/{four}, smoothness flat {coplanar} cube {cube}, \
             background {lb_off}/{lb_on}, total-vs-mean gap {gap:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- 4

fn mixing() -> Verdict {
    let s: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
    let mut identity = true;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, _) = mix_shape_latents([&s, &s, &s, &s], &mut rng).unwrap();
        identity &= m == s;
        let z = draw_mix(s.len(), &mut rng);
        identity &= mix_with([&s, &s, &s, &s], &z).unwrap() == s;
    }
    let mut worst: f64 = 0.0;
    for seed in [11u64, 12, 13, 1011, 2011] {
        let z = draw_mix(100_000, &mut ChaCha8Rng::seed_from_u64(seed));
        for c in 0..4u8 {
            let f = z.iter().filter(|&&x| x == c).count() as f64 / 1e5;
            worst = worst.max((f - 0.25).abs());
        }
    }
    Verdict::new(
        identity && worst <= 0.01,
        format!("equal latents preserved: {identity}; worst |freq - 0.25| = {worst:.4} over 5 seeds"),
    )
}

// ---------------------------------------------------------------- 5

fn voxel_oracles() -> Verdict {
    let spec = GridSpec::benchmark(4.0);
    let a = voxelize(&TriangleMesh::cuboid([-1.0, -0.5, -0.5], [0.0, 0.5, 0.5]), spec).unwrap();
    let b = voxelize(&TriangleMesh::cuboid([-0.5, -0.5, -0.5], [0.5, 0.5, 0.5]), spec).unwrap();
    let third = union_iou(&[a.clone()], &b).unwrap();

    let extent = 2.5;
    let sphere = icosphere(4).unwrap();
    let grid = voxelize(&sphere, GridSpec::benchmark(extent)).unwrap();
    let ratio = grid.count() as f64 / 32f64.powi(3);
    let exact = 4.0 / 3.0 * std::f64::consts::PI / extent.powi(3);
    let rel = (ratio / exact - 1.0).abs();

    let figure = [
        TriangleMesh::cuboid([-0.3, -0.2, -1.0], [0.3, 0.2, 0.6]),
        icosphere(2).unwrap().map_vertices(|v| vec3::add(vec3::scale(v, 0.3), [0.0, 0.0, 0.9])),
    ];
    let same = iou(
        &voxelize_union(&figure, spec).unwrap(),
        &voxelize_union(&figure.clone(), spec).unwrap(),
    )
    .unwrap();
    Verdict::new(
        third == 1.0 / 3.0 && rel < 0.10 && same == 1.0,
        format!("boxes {third}, sphere occupancy off by {:.2}%, identical meshes {same}", 100.0 * rel),
    )
}

// ---------------------------------------------------------------- 6, 7

struct Scores {
    standard: f64,
    hard: f64,
    train_time: Duration,
}

fn mean_iou(dir: &Path, protocol: &str) -> Result<f64, String> {
    let text = std::fs::read_to_string(dir.join(format!("{protocol}.json"))).map_err(|e| e.to_string())?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    v["mean_iou"].as_f64().ok_or_else(|| "report lacks mean_iou".into())
}

fn train_and_score(data: &Path, work: &Path, label: &str, extra: &[&str]) -> Result<Scores, String> {
    let run = work.join(label);
    let mut args = vec!["train", "--data", p(data), "--out", p(&run), "--preset", "desk", "--log-every", "0"];
    args.extend_from_slice(extra);
    let t = Instant::now();
    run_cli(&args)?;
    let train_time = t.elapsed();
    let eval = work.join(format!("{label}_eval"));
    let ck = run.join("checkpoints/final.json");
    run_cli(&["eval", "--data", p(data), "--checkpoint", p(&ck), "--out", p(&eval), "--protocol", "both"])?;
    Ok(Scores {
        standard: mean_iou(&eval, "standard")?,
        hard: mean_iou(&eval, "hard")?,
        train_time,
    })
}

fn untrained_floor(data: &Path) -> Result<f64, String> {
    let (m, root) = Manifest::load(data).map_err(|e| e.to_string())?;
    let mut cfg = EncoderConfig::desk(m.camera.distance);
    cfg.image_size = m.image_size;
    // the model `train` starts from: seed 0
    let model = Cerberus::new(cfg, 0).map_err(|e| e.to_string())?;
    derender_core::eval::eval_standard(&model, &m, &root, "floor")
        .map(|r| r.mean_iou)
        .map_err(|e| e.to_string())
}

const TARGET_IOU: f64 = 0.35;

fn end_to_end(work: &Path) -> (Status, Status) {
    if std::env::var("DERENDER_ACCEPTANCE_SKIP_TRAINING").is_ok_and(|v| v == "1") {
        let why = "DERENDER_ACCEPTANCE_SKIP_TRAINING=1".to_string();
        return (Status::Skipped(why.clone()), Status::Skipped(why));
    }
    let result = (|| -> Result<(f64, Scores, Scores), String> {
        let data = work.join("desk");
        run_cli(&["gen-data", "--out", p(&data), "--subjects", "3", "--quadruplets", "300", "--image-size", "64", "--seed", "0"])?;
        let floor = untrained_floor(&data)?;
        let cerberus = train_and_score(&data, work, "cerberus", &[])?;
        let free = train_and_score(&data, work, "free", &["--no-pose-consistency"])?;
        Ok((floor, cerberus, free))
    })();
    match result {
        Err(e) => (
            Status::Done(Verdict::new(false, e.clone())),
            Status::Done(Verdict::new(false, e)),
        ),
        Ok((floor, c, f)) => {
            let minutes = c.train_time.as_secs_f64() / 60.0;
            let six = Verdict::new(
                c.standard >= TARGET_IOU && c.standard - floor >= 0.10 && minutes <= 60.0,
                format!(
                    "standard IoU {:.4} (target {TARGET_IOU}), untrained floor {floor:.4}, margin {:.4}; trained in {minutes:.1} min",
                    c.standard,
                    c.standard - floor
                ),
            );
            let (gap_c, gap_f) = (c.hard - c.standard, f.hard - f.standard);
            let seven = Verdict::new(
                c.hard - f.hard > 0.0 && gap_f < gap_c,
                format!(
                    "hard: cerberus {:.4} vs free {:.4} (diff {:+.4}); hard - standard: cerberus {gap_c:+.4}, free {gap_f:+.4}",
                    c.hard,
                    f.hard,
                    c.hard - f.hard
                ),
            );
            (Status::Done(six), Status::Done(seven))
        }
    }
}

// ---------------------------------------------------------------- 8

fn rigidity(work: &Path) -> Verdict {
    let data = work.join("rigid");
    if let Err(e) = run_cli(&["gen-data", "--out", p(&data), "--quadruplets", "60", "--test-poses", "4", "--image-size", "32", "--seed", "8"]) {
        return Verdict::new(false, e);
    }
    let (m, root) = Manifest::load(&data).unwrap();
    let mut bit_identical = true;
    let mut worst_world: f64 = 0.0;
    let mut poses = 0;
    for subject in &m.subjects {
        let skel = &subject.skeleton;
        let reference = skel.pose(&skel.rest_pose()).unwrap().local;
        for pose in m.poses.iter().filter(|q| q.subject == subject.id) {
            let fig = skel.pose(&pose.angles).unwrap();
            poses += 1;
            for (a, b) in fig.local.iter().zip(&reference) {
                let bits = |m: &TriangleMesh| m.vertices().iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
                bit_identical &= bits(a) == bits(b) && a.faces() == b.faces();
            }
        }
        // world meshes on disk undo to the same local geometry
        for t in m.test.iter().filter(|t| t.subject == subject.id) {
            let fig = skel.pose(&m.poses[t.pose].angles).unwrap();
            let world = m.load_meshes(&root, t).unwrap();
            for (k, w) in world.iter().enumerate() {
                let r = vec3::transpose(&fig.rotations[k]);
                for (wv, lv) in w.vertices().iter().zip(reference[k].vertices()) {
                    let back = vec3::mat_vec(&r, vec3::sub(*wv, fig.positions[k]));
                    worst_world = worst_world.max(vec3::norm(vec3::sub(back, *lv)));
                }
            }
        }
    }
    Verdict::new(
        bit_identical && worst_world < 1e-9,
        format!(
            "{} subjects, {poses} poses: local vertices bit-identical {bit_identical}; test meshes map back within {worst_world:.1e}",
            m.subjects.len()
        ),
    )
}

// ---------------------------------------------------------------- 9

/// Every file under `root` except run records (which hold timestamps).
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != "run.json") {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn determinism(work: &Path) -> Verdict {
    let result = (|| -> Result<Vec<(&'static str, usize, bool)>, String> {
        let mut rows = Vec::new();
        let mut dirs = Vec::new();
        for k in 0..2 {
            let root = work.join(format!("det{k}"));
            let data = root.join("data");
            let run = root.join("run");
            let eval = root.join("eval");
            run_cli(&["gen-data", "--out", p(&data), "--quadruplets", "12", "--test-poses", "2", "--image-size", "32", "--seed", "4"])?;
            run_cli(&[
                "train", "--data", p(&data), "--out", p(&run), "--steps", "8", "--batch", "2",
                "--checkpoint-every", "4", "--seed", "9", "--log-every", "0",
            ])?;
            let ck = run.join("checkpoints/final.json");
            run_cli(&["eval", "--data", p(&data), "--checkpoint", p(&ck), "--out", p(&eval)])?;
            dirs.push((data, run, eval));
        }
        for (i, name) in ["gen-data", "train", "eval"].into_iter().enumerate() {
            let pick = |d: &(PathBuf, PathBuf, PathBuf)| [&d.0, &d.1, &d.2][i].clone();
            let (a, b) = (snapshot(&pick(&dirs[0])), snapshot(&pick(&dirs[1])));
            rows.push((name, a.len(), !a.is_empty() && a == b));
        }
        Ok(rows)
    })();
    match result {
        Err(e) => Verdict::new(false, e),
        Ok(rows) => Verdict::new(
            rows.iter().all(|r| r.2),
            rows.iter()
                .map(|(n, files, same)| format!("{n}: {files} files {}", if *same { "identical" } else { "DIFFER" }))
                .collect::<Vec<_>>()
                .join("; "),
        ),
    }
}

// ----------------------------------------------------------------

fn main() -> ExitCode {
    let work = tempfile::tempdir().expect("temp dir");
    let started = Instant::now();
    println!("acceptance: {}", bin());
    let mut results: Vec<(u32, &str, Status)> = vec![
        (1, "icosphere exactness", Status::Done(icosphere_counts())),
        (2, "gradient suite", Status::Done(gradient_suite())),
        (3, "loss identities", Status::Done(loss_identities())),
        (4, "shape-latent mixing", Status::Done(mixing())),
        (5, "voxel/IoU oracles", Status::Done(voxel_oracles())),
    ];
    let (six, seven) = end_to_end(work.path());
    results.push((6, "desk-scale end-to-end", six));
    results.push((7, "ablation direction", seven));
    results.push((8, "dataset rigidity", Status::Done(rigidity(work.path()))));
    results.push((9, "determinism", Status::Done(determinism(work.path()))));

    let mut failed = 0;
    for (n, name, status) in &results {
        match status {
            Status::Done(v) => {
                failed += usize::from(!v.pass);
                println!("criterion {n} {:<4} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
            }
            Status::Skipped(why) => println!("criterion {n} SKIP {name}: {why}"),
        }
    }
    println!(
        "acceptance: {} of {} criteria failed ({:.0}s)",
        failed,
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::vec3;
use crate::grad::{gradcheck, Graph, Var};

fn toy() -> EncoderConfig {
    EncoderConfig {
        channels: vec![2, 3, 4],
        latent: 4,
        parts: 2,
        image_size: 16,
        depth_range: (2.5, 5.5),
        subdivision: 1,
    }
}

fn cam(size: usize) -> Camera {
    Camera::new(0.3, 0.2, 4.0, 2.0, size, size).unwrap()
}

fn random_image(size: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..3 * size * size).map(|_| rng.random_range(0.0..1.0)).collect();
    Tensor::new(vec![3, size, size], data).unwrap()
}

fn zeroed(config: EncoderConfig) -> Cerberus {
    let mut m = Cerberus::new(config, 0).unwrap();
    m.params_mut().tensors_mut().for_each(|t| t.data_mut().fill(0.0));
    m
}

#[test]
fn zero_network_gives_uniform_maps_and_mid_depth() {
    let mut m = zeroed(toy());
    // quaternions need a nonzero bias to be normalizable
    m.params_mut().get_mut("quat.b").unwrap().data_mut()[0] = 1.0;
    m.params_mut().get_mut("quat.b").unwrap().data_mut()[4] = 1.0;
    let b = m.encode(&random_image(16, 1)).unwrap();
    let u = 1.0 / 256.0;
    assert!(b.prob_maps.data().iter().all(|&p| (p - u).abs() < 1e-15));
    assert!(b.depth_maps.data().iter().all(|&d| (d - 4.0).abs() < 1e-15));
    assert!(b.shape_latent.iter().all(|&s| s == 0.0));
}

#[test]
fn output_shapes_follow_config() {
    let m = Cerberus::new(EncoderConfig::desk(4.0), 3).unwrap();
    let b = m.encode(&random_image(64, 2)).unwrap();
    assert_eq!(b.quaternions.len(), 5);
    assert_eq!(b.prob_maps.shape(), &[5, 64, 64]);
    assert_eq!(b.depth_maps.shape(), &[5, 64, 64]);
    assert_eq!(b.shape_latent.len(), 64);
    assert_eq!(b.object_latent.len(), 64);
    let d = m.shape_to_deformations(&b.shape_latent).unwrap();
    assert_eq!((d.len(), d[0].len()), (5, 162));
}

#[test]
fn prob_maps_are_distributions_and_depth_in_range() {
    let m = Cerberus::new(toy(), 4).unwrap();
    let b = m.encode(&random_image(16, 5)).unwrap();
    for map in b.prob_maps.data().chunks(256) {
        assert!((map.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(map.iter().all(|&p| p >= 0.0));
    }
    assert!(b.depth_maps.data().iter().all(|&d| (2.5..=5.5).contains(&d)));
    for q in &b.quaternions {
        assert!((q.norm() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn fresh_quaternions_start_near_identity() {
    let m = Cerberus::new(toy(), 4).unwrap();
    let bias = m.params().get("quat.b").unwrap().data();
    assert_eq!(bias, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn encode_is_deterministic_and_checks_size() {
    let m = Cerberus::new(toy(), 4).unwrap();
    let img = random_image(16, 6);
    assert_eq!(m.encode(&img).unwrap(), m.encode(&img).unwrap());
    assert!(matches!(
        m.encode(&random_image(8, 6)),
        Err(ModelError::ImageSize { .. })
    ));
}

#[test]
fn from_params_rejects_mismatched_layout() {
    let m = Cerberus::new(toy(), 4).unwrap();
    let mut other = toy();
    other.parts = 3;
    assert!(matches!(
        Cerberus::from_params(other, m.params().clone()),
        Err(ModelError::Params(_))
    ));
}

#[test]
fn deformations_are_linear_and_vanish_at_zero() {
    let mut m = Cerberus::new(toy(), 8).unwrap();
    m.params_mut().get_mut("deform.b").unwrap().data_mut().fill(0.0);
    let zero = m.shape_to_deformations(&[0.0; 4]).unwrap();
    assert!(zero.iter().flatten().flatten().all(|&x| x == 0.0));
    let s = [0.3, -1.2, 0.7, 0.05];
    let s2: Vec<f64> = s.iter().map(|x| 2.0 * x).collect();
    let a = m.shape_to_deformations(&s).unwrap();
    let b = m.shape_to_deformations(&s2).unwrap();
    for (x, y) in a.iter().flatten().flatten().zip(b.iter().flatten().flatten()) {
        assert!((2.0 * x - y).abs() < 1e-14);
    }
    assert!(matches!(
        m.shape_to_deformations(&[0.0; 3]),
        Err(ModelError::LatentWidth { .. })
    ));
}

#[test]
fn deformations_on_tape_match_plain() {
    let m = Cerberus::new(toy(), 8).unwrap();
    let s = vec![0.3, -1.2, 0.7, 0.05];
    let mut g = Graph::new();
    let bound = m.params().bind(&mut g, false);
    let sv = g.constant(Tensor::from_vec(s.clone()));
    let d = m.deformations_on_tape(&mut g, &bound, sv).unwrap();
    let plain: Vec<f64> = m
        .shape_to_deformations(&s)
        .unwrap()
        .into_iter()
        .flatten()
        .flatten()
        .collect();
    for (a, b) in g.value(d).data().iter().zip(&plain) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn one_hot_bundle(n: usize, size: usize, at: &[(usize, usize)], depth: f64) -> LatentBundle {
    let plane = size * size;
    let mut p = vec![0.0; n * plane];
    for (k, &(x, y)) in at.iter().enumerate() {
        p[k * plane + y * size + x] = 1.0;
    }
    LatentBundle {
        object_latent: vec![],
        shape_latent: vec![],
        quaternions: vec![crate::geometry::Quaternion::IDENTITY; n],
        prob_maps: Tensor::new(vec![n, size, size], p).unwrap(),
        depth_maps: Tensor::full(vec![n, size, size], depth),
    }
}

#[test]
fn one_hot_probability_unprojects_its_pixel_center() {
    let c = cam(16);
    let b = one_hot_bundle(2, 16, &[(3, 11), (15, 0)], 3.7);
    for (k, (x, y)) in [(3.0, 11.0), (15.0, 0.0)].into_iter().enumerate() {
        let t = retrieve_translation(&b, &c, k).unwrap();
        let want = c.unproject(x + 0.5, y + 0.5, 3.7).unwrap();
        assert!(vec3::norm(vec3::sub(t, want)) < 1e-12);
    }
    assert!(matches!(
        retrieve_translation(&b, &c, 2),
        Err(ModelError::PartIndex { index: 2, parts: 2 })
    ));
}

#[test]
fn uniform_probability_lands_on_view_axis() {
    let c = cam(16);
    let mut b = one_hot_bundle(1, 16, &[(0, 0)], 4.0);
    b.prob_maps = Tensor::full(vec![1, 16, 16], 1.0 / 256.0);
    let t = retrieve_translation(&b, &c, 0).unwrap();
    assert!(vec3::norm(t) < 1e-12, "{t:?}");
}

fn random_maps(n: usize, h: usize, w: usize, seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p: Vec<f64> = (0..n * h * w).map(|_| rng.random_range(0.0..1.0)).collect();
    for map in p.chunks_mut(h * w) {
        let s: f64 = map.iter().sum();
        map.iter_mut().for_each(|x| *x /= s);
    }
    let d = (0..n * h * w).map(|_| rng.random_range(2.5..5.5)).collect();
    (
        Tensor::new(vec![n, h, w], p).unwrap(),
        Tensor::new(vec![n, h, w], d).unwrap(),
    )
}

#[test]
fn tape_translation_matches_brute_force_loop() {
    let c = Camera::new(1.1, -0.2, 4.5, 2.5, 12, 12).unwrap();
    let (p, d) = random_maps(3, 12, 12, 21);
    let mut g = Graph::new();
    let pv = g.constant(p.clone());
    let dv = g.constant(d.clone());
    let t = translations_on_tape(&mut g, pv, dv, &c).unwrap();
    for k in 0..3 {
        let (mut u, mut v, mut z) = (0.0, 0.0, 0.0);
        for y in 0..12 {
            for x in 0..12 {
                let i = k * 144 + y * 12 + x;
                u += (x as f64 + 0.5) * p.data()[i];
                v += (y as f64 + 0.5) * p.data()[i];
                z += d.data()[i] * p.data()[i];
            }
        }
        let want = c.unproject(u, v, z).unwrap();
        let got = &g.value(t).data()[3 * k..3 * k + 3];
        let err = vec3::norm(vec3::sub([got[0], got[1], got[2]], want)) / vec3::norm(want);
        assert!(err < 1e-9, "part {k}: {err}");
    }
}

#[test]
fn translation_gradients_match_finite_differences() {
    let c = Camera::new(1.1, -0.2, 4.5, 2.5, 8, 8).unwrap();
    let (p, d) = random_maps(2, 8, 8, 22);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = Tensor::new(vec![2, 3], (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let build = move |g: &mut Graph, v: &[Var]| {
        let t = translations_on_tape(g, v[0], v[1], &c)?;
        let wv = g.constant(w.clone());
        let m = g.mul(t, wv)?;
        g.sum(m)
    };
    let err = gradcheck::max_relative_error(&[p, d], 1e-6, &build).unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn encoder_probe_gradient_matches_finite_differences() {
    let m = Cerberus::new(toy(), 11).unwrap();
    let names: Vec<String> = m.params().names().map(str::to_string).collect();
    let mut inputs: Vec<Tensor> = m.params().tensors().cloned().collect();
    inputs.push(random_image(16, 12));
    let c = cam(16);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let wp = Tensor::new(vec![2, 16, 16], (0..512).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let wd = Tensor::new(vec![2, 16, 16], (0..512).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let n_params = names.len();
    let model = m.clone();
    let build = move |g: &mut Graph, v: &[Var]| {
        let bound = BoundParams {
            vars: v[..n_params].to_vec(),
        };
        let lat = model.encode_on_tape(g, &bound, v[n_params]).map_err(to_grad)?;
        let t = model.translations_on_tape(g, &lat, &c).map_err(to_grad)?;
        let a = g.constant(wp.clone());
        let b = g.constant(wd.clone());
        let pa = g.mul(lat.prob, a)?;
        let pa = g.sum(pa)?;
        let db = g.mul(lat.depth, b)?;
        let db = g.sum(db)?;
        let s = g.square(lat.shape)?;
        let s = g.sum(s)?;
        let q = g.narrow(lat.quats, 0, 1)?;
        let q = g.sum(q)?;
        let ts = g.sum(t)?;
        let x = g.add(pa, db)?;
        let x = g.add(x, s)?;
        let x = g.add(x, q)?;
        g.add(x, ts)
    };
    let analytic = gradcheck::analytic(&inputs, &build).unwrap();
    let stem = names.iter().position(|n| n == "stem.w").unwrap();
    let numeric = gradcheck::numeric(&inputs, stem, None, 1e-6, &build).unwrap();
    let err = gradcheck::relative_error(analytic[stem].data(), &numeric);
    assert!(err < 1e-2, "{err}");
}

fn to_grad(e: ModelError) -> crate::grad::GradError {
    crate::grad::GradError::Custom(e.to_string())
}

#[test]
fn zero_deformation_identity_rotation_gives_unit_spheres() {
    let mut m = zeroed(toy());
    m.params_mut().get_mut("quat.b").unwrap().data_mut()[0] = 1.0;
    m.params_mut().get_mut("quat.b").unwrap().data_mut()[4] = 1.0;
    let c = cam(16);
    let b = m.encode(&random_image(16, 1)).unwrap();
    let parts = m.assemble(&b, &b.shape_latent, &c).unwrap();
    assert_eq!(parts.len(), 2);
    for (k, part) in parts.parts().iter().enumerate() {
        let t = retrieve_translation(&b, &c, k).unwrap();
        assert_eq!(part.translation, t);
        for v in part.world_mesh().vertices() {
            assert!((vec3::norm(vec3::sub(*v, t)) - 1.0).abs() < 1e-12);
        }
    }
    assert_eq!(parts, m.assemble(&b, &b.shape_latent, &c).unwrap());
}

#[test]
fn assembled_parts_match_tape_world_vertices() {
    let m = Cerberus::new(toy(), 17).unwrap();
    let c = cam(16);
    let img = random_image(16, 18);
    let b = m.encode(&img).unwrap();
    let parts = m.assemble(&b, &b.shape_latent, &c).unwrap();

    let mut g = Graph::new();
    let bound = m.params().bind(&mut g, false);
    let iv = g.constant(img);
    let lat = m.encode_on_tape(&mut g, &bound, iv).unwrap();
    let d = m.deformations_on_tape(&mut g, &bound, lat.shape).unwrap();
    let local = m.local_vertices_on_tape(&mut g, d).unwrap();
    let t = m.translations_on_tape(&mut g, &lat, &c).unwrap();
    let w = m.world_vertices_on_tape(&mut g, local, lat.quats, t, &c).unwrap();
    let plain: Vec<f64> = parts
        .world_meshes()
        .iter()
        .flat_map(|mesh| mesh.vertices().iter().flatten().copied().collect::<Vec<_>>())
        .collect();
    for (a, b) in g.value(w).data().iter().zip(&plain) {
        assert!((a - b).abs() < 1e-12);
    }
}

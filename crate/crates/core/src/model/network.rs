use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{glorot, BoundParams, ParamStore};
use super::translation::{retrieve_translation_maps, translations_on_tape};
use super::{EncoderConfig, LatentBundle, ModelError, Part, PartSet};
use crate::geometry::{icosphere, vec3, Camera, Quaternion, TriangleMesh, Vec3};
use crate::grad::{Graph, Tensor, Var};

/// Tape handles for one encoded image.
#[derive(Clone, Copy, Debug)]
pub struct LatentVars {
    pub object: Var,
    /// `[latent]`
    pub shape: Var,
    /// `[N, 4]`, unit rows.
    pub quats: Var,
    /// `[N, H, W]`, each map sums to one.
    pub prob: Var,
    /// `[N, H, W]` within the configured depth range.
    pub depth: Var,
}

enum Init {
    Glorot { fan_in: usize, fan_out: usize },
    Zero,
    QuatBias,
}

/// The encoder, its heads and the shared base mesh.
#[derive(Clone, Debug)]
pub struct Cerberus {
    config: EncoderConfig,
    params: ParamStore,
    base: TriangleMesh,
    faces: Rc<Vec<[usize; 3]>>,
}

fn layout(c: &EncoderConfig) -> Vec<(String, Vec<usize>, Init)> {
    let conv = |cout: usize, cin: usize, k: usize| Init::Glorot {
        fan_in: cin * k * k,
        fan_out: cout * k * k,
    };
    let ch = &c.channels;
    let last = *ch.last().unwrap();
    let n = c.parts;
    let mut out = vec![
        ("stem.w".to_string(), vec![ch[0], 3, 3, 3], conv(ch[0], 3, 3)),
        ("stem.b".to_string(), vec![ch[0]], Init::Zero),
    ];
    for i in 1..ch.len() {
        out.push((format!("down{i}.w"), vec![ch[i], ch[i - 1], 3, 3], conv(ch[i], ch[i - 1], 3)));
        out.push((format!("down{i}.b"), vec![ch[i]], Init::Zero));
        out.push((format!("res{i}.w"), vec![ch[i], ch[i], 3, 3], conv(ch[i], ch[i], 3)));
        out.push((format!("res{i}.b"), vec![ch[i]], Init::Zero));
    }
    let lin = |i: usize, o: usize| Init::Glorot {
        fan_in: i,
        fan_out: o,
    };
    let deform_out = n * c.vertices_per_part() * 3;
    out.extend([
        ("latent.w".to_string(), vec![last, c.latent], lin(last, c.latent)),
        ("latent.b".to_string(), vec![c.latent], Init::Zero),
        ("quat.w".to_string(), vec![last, 4 * n], lin(last, 4 * n)),
        ("quat.b".to_string(), vec![4 * n], Init::QuatBias),
        ("deform.w".to_string(), vec![c.latent, deform_out], lin(c.latent, deform_out)),
        ("deform.b".to_string(), vec![deform_out], Init::Zero),
    ]);
    for i in (1..ch.len()).rev() {
        // transposed conv weight is [in, out, k, k]
        out.push((
            format!("up{i}.w"),
            vec![ch[i], ch[i - 1], 4, 4],
            Init::Glorot {
                fan_in: ch[i] * 16,
                fan_out: ch[i - 1] * 16,
            },
        ));
        out.push((format!("up{i}.b"), vec![ch[i - 1]], Init::Zero));
    }
    out.extend([
        ("prob.w".to_string(), vec![n, ch[0], 3, 3], conv(n, ch[0], 3)),
        ("prob.b".to_string(), vec![n], Init::Zero),
        ("depth.w".to_string(), vec![n, ch[0], 3, 3], conv(n, ch[0], 3)),
        ("depth.b".to_string(), vec![n], Init::Zero),
    ]);
    out
}

impl Cerberus {
    /// Fresh model with seeded initialization.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape, init) in layout(&config) {
            let t = match init {
                Init::Glorot { fan_in, fan_out } => glorot(shape, fan_in, fan_out, &mut rng),
                Init::Zero => Tensor::zeros(shape),
                Init::QuatBias => {
                    let data = (0..shape[0]).map(|i| if i % 4 == 0 { 1.0 } else { 0.0 }).collect();
                    Tensor::new(shape, data).expect("bias shape")
                }
            };
            params.push(name, t);
        }
        Self::from_params(config, params)
    }

    /// Model around existing parameters; names and shapes must match the
    /// layout implied by `config`.
    pub fn from_params(config: EncoderConfig, params: ParamStore) -> Result<Self, ModelError> {
        config.validate()?;
        let want = layout(&config);
        if want.len() != params.len() {
            return Err(ModelError::Params(format!(
                "expected {} tensors, got {}",
                want.len(),
                params.len()
            )));
        }
        for ((name, shape, _), (got_name, t)) in want.iter().zip(params.entries()) {
            if name != got_name || shape.as_slice() != t.shape() {
                return Err(ModelError::Params(format!(
                    "expected {name} {shape:?}, got {got_name} {:?}",
                    t.shape()
                )));
            }
        }
        let base = icosphere(config.subdivision)?;
        let nv = base.vertex_count();
        let faces = (0..config.parts)
            .flat_map(|k| base.faces().iter().map(move |f| f.map(|i| i + k * nv)))
            .collect();
        Ok(Self {
            config,
            params,
            base,
            faces: Rc::new(faces),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn base_mesh(&self) -> &TriangleMesh {
        &self.base
    }

    /// Faces of all parts stacked, indexing `[N · V, 3]` vertices.
    pub fn stacked_faces(&self) -> Rc<Vec<[usize; 3]>> {
        self.faces.clone()
    }

    fn var(&self, bound: &BoundParams, name: &str) -> Var {
        bound.vars[self.params.index_of(name).expect("layout name")]
    }

    fn check_image(&self, shape: &[usize]) -> Result<(), ModelError> {
        let s = self.config.image_size;
        if shape != [3, s, s] {
            return Err(ModelError::ImageSize {
                expected: vec![3, s, s],
                got: shape.to_vec(),
            });
        }
        Ok(())
    }

    /// Encode a `[3, H, W]` image on the tape.
    pub fn encode_on_tape(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        image: Var,
    ) -> Result<LatentVars, ModelError> {
        self.check_image(g.shape(image))?;
        let c = &self.config;
        let p = |name: &str| self.var(bound, name);

        let stem = g.conv2d(image, p("stem.w"), p("stem.b"), 1, 1)?;
        let mut x = g.relu(stem)?;
        let mut skips = vec![x];
        for i in 1..c.channels.len() {
            let down = g.conv2d(x, p(&format!("down{i}.w")), p(&format!("down{i}.b")), 2, 1)?;
            let down = g.relu(down)?;
            let res = g.conv2d(down, p(&format!("res{i}.w")), p(&format!("res{i}.b")), 1, 1)?;
            let res = g.relu(res)?;
            x = g.add(down, res)?;
            skips.push(x);
        }

        let object = g.global_avg_pool(x)?;
        let shape = g.linear(object, p("latent.w"), p("latent.b"))?;
        let q = g.linear(object, p("quat.w"), p("quat.b"))?;
        let q = g.reshape(q, &[c.parts, 4])?;
        let quats = g.quat_normalize(q)?;

        for i in (1..c.channels.len()).rev() {
            let up = g.conv_transpose2d(x, p(&format!("up{i}.w")), p(&format!("up{i}.b")), 2, 1)?;
            let up = g.add(up, skips[i - 1])?;
            x = g.relu(up)?;
        }
        let logits = g.conv2d(x, p("prob.w"), p("prob.b"), 1, 1)?;
        let prob = g.spatial_softmax(logits)?;
        let raw = g.conv2d(x, p("depth.w"), p("depth.b"), 1, 1)?;
        let sig = g.sigmoid(raw)?;
        let (lo, hi) = c.depth_range;
        let depth = g.scale(sig, hi - lo)?;
        let depth = g.add_scalar(depth, lo)?;
        Ok(LatentVars {
            object,
            shape,
            quats,
            prob,
            depth,
        })
    }

    /// Linear map from a shape latent to `[N, V, 3]` displacements.
    pub fn deformations_on_tape(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        shape_latent: Var,
    ) -> Result<Var, ModelError> {
        if g.shape(shape_latent) != [self.config.latent] {
            return Err(ModelError::LatentWidth {
                expected: self.config.latent,
                got: g.value(shape_latent).len(),
            });
        }
        let d = g.linear(shape_latent, self.var(bound, "deform.w"), self.var(bound, "deform.b"))?;
        Ok(g.reshape(d, &[self.config.parts, self.base.vertex_count(), 3])?)
    }

    /// Base sphere plus displacements `[N, V, 3]` (part-local vertices).
    pub fn local_vertices_on_tape(&self, g: &mut Graph, deformations: Var) -> Result<Var, ModelError> {
        let (n, nv) = (self.config.parts, self.base.vertex_count());
        let base: Vec<f64> = (0..n)
            .flat_map(|_| self.base.vertices().iter().flatten().copied())
            .collect();
        let base = g.constant(Tensor::new(vec![n, nv, 3], base)?);
        Ok(g.add(base, deformations)?)
    }

    /// World vertices `[N · V, 3]`: local vertices rotated by
    /// `camera_to_world · R(q)` and translated.
    pub fn world_vertices_on_tape(
        &self,
        g: &mut Graph,
        local: Var,
        quats: Var,
        translations: Var,
        camera: &Camera,
    ) -> Result<Var, ModelError> {
        let rot = g.quat_rotation(quats, camera.camera_to_world())?;
        let world = g.rigid_transform(local, rot, translations)?;
        let total = self.config.parts * self.base.vertex_count();
        Ok(g.reshape(world, &[total, 3])?)
    }

    /// `[N, 3]` translations for an encoded image seen through `camera`.
    pub fn translations_on_tape(
        &self,
        g: &mut Graph,
        latents: &LatentVars,
        camera: &Camera,
    ) -> Result<Var, ModelError> {
        Ok(translations_on_tape(g, latents.prob, latents.depth, camera)?)
    }

    /// Plain-value encoding of one image.
    pub fn encode(&self, image: &Tensor) -> Result<LatentBundle, ModelError> {
        self.check_image(image.shape())?;
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let img = g.constant(image.clone());
        let v = self.encode_on_tape(&mut g, &bound, img)?;
        let quaternions = g
            .value(v.quats)
            .data()
            .chunks_exact(4)
            .map(Quaternion::from_slice)
            .collect();
        Ok(LatentBundle {
            object_latent: g.value(v.object).data().to_vec(),
            shape_latent: g.value(v.shape).data().to_vec(),
            quaternions,
            prob_maps: g.value(v.prob).clone(),
            depth_maps: g.value(v.depth).clone(),
        })
    }

    /// Per-part vertex displacements for a shape latent.
    pub fn shape_to_deformations(&self, shape_latent: &[f64]) -> Result<Vec<Vec<Vec3>>, ModelError> {
        if shape_latent.len() != self.config.latent {
            return Err(ModelError::LatentWidth {
                expected: self.config.latent,
                got: shape_latent.len(),
            });
        }
        let w = self.params.get("deform.w").expect("layout").data();
        let b = self.params.get("deform.b").expect("layout").data();
        let out = b.len();
        let mut d = b.to_vec();
        for (i, &s) in shape_latent.iter().enumerate() {
            if s == 0.0 {
                continue;
            }
            let row = &w[i * out..(i + 1) * out];
            d.iter_mut().zip(row).for_each(|(x, r)| *x += s * r);
        }
        let nv = self.base.vertex_count();
        Ok(d.chunks_exact(nv * 3)
            .map(|part| part.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
            .collect())
    }

    /// Parts from a bundle, with deformations taken from `shape_used`.
    pub fn assemble(
        &self,
        bundle: &LatentBundle,
        shape_used: &[f64],
        camera: &Camera,
    ) -> Result<PartSet, ModelError> {
        let deformations = self.shape_to_deformations(shape_used)?;
        let to_world = camera.camera_to_world();
        let mut parts = Vec::with_capacity(self.config.parts);
        for (k, disp) in deformations.iter().enumerate() {
            let mesh = self.base.deform(disp)?;
            let r = bundle.quaternions[k].to_matrix()?;
            let translation = retrieve_translation_maps(&bundle.prob_maps, &bundle.depth_maps, camera, k);
            if !translation.iter().all(|t| t.is_finite()) {
                return Err(ModelError::NonFinite("translation"));
            }
            parts.push(Part {
                mesh,
                rotation: vec3::mat_mul(&to_world, &r),
                translation,
            });
        }
        Ok(PartSet::new(parts))
    }
}

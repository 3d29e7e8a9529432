use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{clip_global_norm, Adam, Checkpoint, TrainConfig, TrainError};
use crate::dataset::Manifest;
use crate::geometry::Camera;
use crate::grad::{Graph, Tensor};
use crate::losses::{draw_mix, quadruplet_loss, LossError, QuadViews};
use crate::model::Cerberus;
use crate::render::{LightRig, RenderSettings};

pub const LOSS_CSV_HEADER: &str = "step,recon,translation,background,smoothness,total";

/// One training quadruplet in memory, views ordered `a0, a1, b0, b1`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadSample {
    pub record: usize,
    pub images: [Tensor; 4],
    pub backgrounds: [Tensor; 4],
    pub cameras: [Camera; 4],
}

/// Read every training record of a manifest.
pub fn load_quadruplets(manifest: &Manifest, root: &Path) -> Result<Vec<QuadSample>, TrainError> {
    manifest
        .records
        .iter()
        .enumerate()
        .map(|(record, r)| {
            let [a0, a1, b0, b1] = r.views.ordered().map(|v| manifest.load_view(root, v));
            let views = [a0?, a1?, b0?, b1?];
            Ok(QuadSample {
                record,
                cameras: [0, 1, 2, 3].map(|i| views[i].camera),
                images: views.clone().map(|v| v.image),
                backgrounds: views.map(|v| v.background),
            })
        })
        .collect()
}

/// Unweighted loss terms and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub recon: f64,
    pub translation: f64,
    pub background: f64,
    pub smoothness: f64,
    pub total: f64,
}

impl LossComponents {
    fn add_scaled(&mut self, o: &LossComponents, s: f64) {
        self.recon += s * o.recon;
        self.translation += s * o.translation;
        self.background += s * o.background;
        self.smoothness += s * o.smoothness;
        self.total += s * o.total;
    }

    pub fn csv_row(&self, step: u64) -> String {
        format!(
            "{step},{},{},{},{},{}",
            self.recon, self.translation, self.background, self.smoothness, self.total
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    /// Optimizer step count after the update.
    pub step: u64,
    pub losses: LossComponents,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub records: Vec<usize>,
    /// Latent mixing selector used for each quadruplet (`None` without pose
    /// consistency).
    pub mixes: Vec<Option<Vec<u8>>>,
}

pub struct Trainer {
    pub model: Cerberus,
    pub adam: Adam,
    pub config: TrainConfig,
    pub lights: LightRig,
    pub settings: RenderSettings,
}

impl Trainer {
    pub fn new(model: Cerberus, config: TrainConfig, lights: LightRig) -> Result<Self, TrainError> {
        config.validate()?;
        lights.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        let adam = Adam::new(model.params());
        Ok(Self {
            model,
            adam,
            config,
            lights,
            settings: RenderSettings::default(),
        })
    }

    /// Resume from a checkpoint, keeping its optimizer state. `config`
    /// replaces the stored training config (e.g. to extend `steps`).
    pub fn resume(ck: &Checkpoint, config: TrainConfig, lights: LightRig) -> Result<Self, TrainError> {
        config.validate()?;
        let model = ck.model()?;
        Ok(Self {
            model,
            adam: ck.optimizer.clone(),
            config,
            lights,
            settings: RenderSettings::default(),
        })
    }

    pub fn step(&self) -> u64 {
        self.adam.step
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(&self.model, &self.adam, &self.config)
    }

    /// Randomness of the next step depends only on the seed and the step
    /// index, so resumed runs replay the same draws.
    fn step_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.adam.step);
        rng
    }

    /// Loss terms and parameter gradients of one quadruplet.
    pub fn quad_gradients(
        &self,
        q: &QuadSample,
        mix: Option<&[u8]>,
    ) -> Result<(LossComponents, Vec<Tensor>), TrainError> {
        let wrap = |e: LossError| TrainError::Record {
            record: q.record,
            source: e,
        };
        let mut g = Graph::new();
        let bound = self.model.params().bind(&mut g, true);
        let mut latents = Vec::with_capacity(4);
        for img in &q.images {
            let v = g.constant(img.clone());
            latents.push(self.model.encode_on_tape(&mut g, &bound, v).map_err(|e| wrap(e.into()))?);
        }
        let views = QuadViews {
            images: [0, 1, 2, 3].map(|i| g.constant(q.images[i].clone())),
            backgrounds: [0, 1, 2, 3].map(|i| g.constant(q.backgrounds[i].clone())),
            cameras: q.cameras,
            latents: [latents[0], latents[1], latents[2], latents[3]],
        };
        let loss = quadruplet_loss(
            &mut g,
            &self.model,
            &bound,
            &views,
            mix,
            &self.config.weights,
            &self.lights,
            &self.settings,
        )
        .map_err(wrap)?;
        let scalar = |v| g.value(v).item();
        let parts = LossComponents {
            recon: scalar(loss.recon),
            translation: scalar(loss.translation),
            background: scalar(loss.background),
            smoothness: scalar(loss.smoothness),
            total: scalar(loss.total),
        };
        let mut grads = g.backward(loss.total)?;
        let out = bound
            .vars
            .iter()
            .zip(self.model.params().tensors())
            .map(|(v, t)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        Ok((parts, out))
    }

    /// Draw a batch (with replacement) from `data` and update the model.
    pub fn train_step(&mut self, data: &[QuadSample]) -> Result<StepReport, TrainError> {
        if data.is_empty() {
            return Err(TrainError::Config("no training quadruplets".into()));
        }
        let mut rng = self.step_rng();
        let picks: Vec<usize> = (0..self.config.batch).map(|_| rng.random_range(0..data.len())).collect();
        let batch: Vec<&QuadSample> = picks.iter().map(|&i| &data[i]).collect();
        self.step_on(&batch, &mut rng)
    }

    /// Update on an explicit batch; one latent-mixing draw per quadruplet.
    pub fn step_on(&mut self, batch: &[&QuadSample], rng: &mut impl Rng) -> Result<StepReport, TrainError> {
        if batch.is_empty() {
            return Err(TrainError::Config("empty batch".into()));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut losses = LossComponents::default();
        let mut sum: Vec<Tensor> = self.model.params().tensors().map(|t| Tensor::zeros(t.shape())).collect();
        let mut mixes = Vec::with_capacity(batch.len());
        for q in batch {
            let mix = self
                .config
                .pose_consistency
                .then(|| draw_mix(self.model.config().latent, rng));
            let (parts, grads) = self.quad_gradients(q, mix.as_deref())?;
            losses.add_scaled(&parts, scale);
            for (s, g) in sum.iter_mut().zip(&grads) {
                s.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += scale * b);
            }
            mixes.push(mix);
        }
        let grad_norm = clip_global_norm(&mut sum, self.config.clip_norm);
        self.adam.update(self.model.params_mut(), &sum, self.config.lr)?;
        Ok(StepReport {
            step: self.adam.step,
            losses,
            grad_norm,
            records: batch.iter().map(|q| q.record).collect(),
            mixes,
        })
    }

    /// Train until `config.steps` optimizer steps have been taken, writing
    /// one CSV row per step and checkpoints into `checkpoint_dir`.
    pub fn run(
        &mut self,
        data: &[QuadSample],
        log: &mut dyn Write,
        checkpoint_dir: Option<&Path>,
        mut on_step: impl FnMut(&StepReport),
    ) -> Result<Vec<StepReport>, TrainError> {
        let mut out = Vec::new();
        while self.adam.step < self.config.steps {
            let report = self.train_step(data)?;
            writeln!(log, "{}", report.losses.csv_row(report.step)).map_err(|e| TrainError::io("loss log", e))?;
            if let Some(dir) = checkpoint_dir {
                let every = self.config.checkpoint_every;
                if every > 0 && report.step % every == 0 {
                    self.checkpoint().save(&dir.join(format!("step_{:06}.json", report.step)))?;
                }
            }
            on_step(&report);
            out.push(report);
        }
        if let Some(dir) = checkpoint_dir {
            self.checkpoint().save(&dir.join("final.json"))?;
        }
        Ok(out)
    }
}

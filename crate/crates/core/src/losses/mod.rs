//! Training objectives on the tape: pixel reconstruction, shape-latent
//! mixing across a quadruplet, cross-view reconstruction, translation
//! consistency, background mass and dihedral smoothness.

mod quadruplet;
mod smoothness;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::GeometryError;
use crate::grad::{GradError, Graph, Var};
use crate::model::ModelError;
use crate::render::RenderError;

pub use quadruplet::{
    partner, quadruplet_loss, recon_jobs, QuadLoss, QuadViews, RenderJob, A0, A1, B0, B1,
};
pub use smoothness::{smoothness_energy, smoothness_loss, SmoothnessOp};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Weights of the reconstruction, translation, background and smoothness
/// terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub recon: f64,
    pub translation: f64,
    pub background: f64,
    pub smoothness: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            recon: 1.0,
            translation: 1.0,
            background: 1.0,
            smoothness: 0.0001,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), String> {
        let w = [self.recon, self.translation, self.background, self.smoothness];
        if w.iter().all(|x| x.is_finite() && *x >= 0.0) {
            Ok(())
        } else {
            Err(format!("loss weights must be finite and nonnegative: {w:?}"))
        }
    }
}

fn check_same(g: &Graph, op: &'static str, a: Var, b: Var) -> Result<(), LossError> {
    if g.shape(a) != g.shape(b) {
        return Err(LossError::Shape {
            op,
            detail: format!("{:?} vs {:?}", g.shape(a), g.shape(b)),
        });
    }
    Ok(())
}

/// Mean over pixels and channels of `(image − render)²`.
pub fn mse_reconstruction(g: &mut Graph, image: Var, render: Var) -> Result<Var, LossError> {
    check_same(g, "mse", image, render)?;
    let d = g.sub(image, render)?;
    let sq = g.square(d)?;
    Ok(g.mean(sq)?)
}

/// `(1/N) Σ_k ‖T0_k − T1_k‖²` over `[N, 3]` translation sets.
pub fn translation_consistency(g: &mut Graph, t0: Var, t1: Var) -> Result<Var, LossError> {
    check_same(g, "translation_consistency", t0, t1)?;
    let n = g.shape(t0)[0];
    let d = g.sub(t0, t1)?;
    let sq = g.square(d)?;
    let s = g.sum(sq)?;
    Ok(g.scale(s, 1.0 / n as f64)?)
}

/// `½ (L_t(a0, a1) + L_t(b0, b1))`, translations indexed `a0, a1, b0, b1`.
pub fn translation_consistency_total(g: &mut Graph, t: [Var; 4]) -> Result<Var, LossError> {
    let la = translation_consistency(g, t[A0], t[A1])?;
    let lb = translation_consistency(g, t[B0], t[B1])?;
    let s = g.add(la, lb)?;
    Ok(g.scale(s, 0.5)?)
}

/// `(1/N) Σ_k Σ_xy p_k(x, y) · b(x, y)` with `b = 1` on background pixels.
pub fn background_loss(g: &mut Graph, prob: Var, background: Var) -> Result<Var, LossError> {
    let (sp, sb) = (g.shape(prob), g.shape(background));
    if sp.len() != 3 || sb != &sp[1..] {
        return Err(LossError::Shape {
            op: "background_loss",
            detail: format!("maps {sp:?}, mask {sb:?}"),
        });
    }
    let per = g.map_dot(prob, background)?;
    Ok(g.mean(per)?)
}

/// Draw one source index in `0..4` per latent element.
pub fn draw_mix(width: usize, rng: &mut impl Rng) -> Vec<u8> {
    (0..width).map(|_| rng.random_range(0..4u8)).collect()
}

/// Elementwise mix `S̃[i] = sources[z[i]][i]`.
pub fn mix_with(sources: [&[f64]; 4], z: &[u8]) -> Result<Vec<f64>, LossError> {
    let n = sources[0].len();
    if sources.iter().any(|s| s.len() != n) || z.len() != n || z.iter().any(|&c| c > 3) {
        return Err(LossError::Shape {
            op: "mix_shape_latents",
            detail: format!(
                "widths {:?}, selector {}",
                sources.map(<[f64]>::len),
                z.len()
            ),
        });
    }
    Ok(z.iter().enumerate().map(|(i, &c)| sources[c as usize][i]).collect())
}

/// Mix four shape latents with a fresh uniform selector; returns the mix
/// and the selector.
pub fn mix_shape_latents(
    sources: [&[f64]; 4],
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, Vec<u8>), LossError> {
    let z = draw_mix(sources[0].len(), rng);
    Ok((mix_with(sources, &z)?, z))
}

/// Weighted sum of the four terms.
pub fn weighted_total(
    g: &mut Graph,
    terms: [Var; 4],
    w: &LossWeights,
) -> Result<Var, LossError> {
    let weights = [w.recon, w.translation, w.background, w.smoothness];
    let mut total = g.scale(terms[0], weights[0])?;
    for (t, wt) in terms.into_iter().zip(weights).skip(1) {
        let s = g.scale(t, wt)?;
        total = g.add(total, s)?;
    }
    Ok(total)
}

//! Loss wiring for one quadruplet: two poses (`a`, `b`) each seen from two
//! viewpoints (`0`, `1`), indexed `a0, a1, b0, b1`.

use std::rc::Rc;

use super::{
    background_loss, mse_reconstruction, translation_consistency_total, weighted_total, LossError,
    LossWeights, SmoothnessOp,
};
use crate::geometry::Camera;
use crate::grad::{Graph, Var};
use crate::model::{BoundParams, Cerberus, LatentVars};
use crate::render::{LightRig, RasterOp, RenderSettings};

pub const A0: usize = 0;
pub const A1: usize = 1;
pub const B0: usize = 2;
pub const B1: usize = 3;

/// The other viewpoint of the same pose.
pub fn partner(view: usize) -> usize {
    view ^ 1
}

/// One render in a view's reconstruction term: the rotated mesh of
/// `mesh_from`, placed with the translations of `translation_from`, seen
/// through the camera of `camera_of`, compared with image `target`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RenderJob {
    pub mesh_from: usize,
    pub translation_from: usize,
    pub camera_of: usize,
    pub target: usize,
}

/// The own-view and cross-view renders averaged into view `i`'s term.
pub fn recon_jobs(i: usize) -> [RenderJob; 2] {
    let p = partner(i);
    [
        RenderJob {
            mesh_from: i,
            translation_from: i,
            camera_of: i,
            target: i,
        },
        RenderJob {
            mesh_from: i,
            translation_from: p,
            camera_of: p,
            target: p,
        },
    ]
}

/// Tape inputs of one quadruplet.
pub struct QuadViews {
    /// `[3, H, W]` target images.
    pub images: [Var; 4],
    /// `[H, W]`, 1 on background pixels.
    pub backgrounds: [Var; 4],
    pub cameras: [Camera; 4],
    pub latents: [LatentVars; 4],
}

/// Scalar loss handles for one quadruplet.
#[derive(Clone, Debug)]
pub struct QuadLoss {
    pub per_view: [Var; 4],
    pub recon: Var,
    pub translation: Var,
    pub background: Var,
    pub smoothness: Var,
    pub total: Var,
    pub translations: [Var; 4],
}

fn stack<T: Copy>(f: impl FnMut(usize) -> Result<T, LossError>) -> Result<[T; 4], LossError> {
    let v: Vec<T> = (0..4).map(f).collect::<Result<_, _>>()?;
    Ok([v[0], v[1], v[2], v[3]])
}

fn mean4(g: &mut Graph, v: [Var; 4]) -> Result<Var, LossError> {
    let s = g.add(v[0], v[1])?;
    let s = g.add(s, v[2])?;
    let s = g.add(s, v[3])?;
    Ok(g.scale(s, 0.25)?)
}

/// Build every loss term of a quadruplet. With `mix = Some(z)` all four
/// views share the deformations of the mixed shape latent; with `None`
/// each view uses its own latent.
#[allow(clippy::too_many_arguments)]
pub fn quadruplet_loss(
    g: &mut Graph,
    model: &Cerberus,
    bound: &BoundParams,
    views: &QuadViews,
    mix: Option<&[u8]>,
    weights: &LossWeights,
    lights: &LightRig,
    settings: &RenderSettings,
) -> Result<QuadLoss, LossError> {
    let n = model.config().parts;
    let translations = stack(|i| {
        Ok(model.translations_on_tape(g, &views.latents[i], &views.cameras[i])?)
    })?;

    let local = match mix {
        Some(z) => {
            let shapes = views.latents.map(|l| l.shape);
            let mixed = g.select(&shapes, z)?;
            let d = model.deformations_on_tape(g, bound, mixed)?;
            let l = model.local_vertices_on_tape(g, d)?;
            [l; 4]
        }
        None => stack(|i| {
            let d = model.deformations_on_tape(g, bound, views.latents[i].shape)?;
            Ok(model.local_vertices_on_tape(g, d)?)
        })?,
    };

    let faces = model.stacked_faces();
    let per_view = stack(|i| {
        let mut terms = Vec::with_capacity(2);
        for job in recon_jobs(i) {
            let world = model.world_vertices_on_tape(
                g,
                local[job.mesh_from],
                views.latents[job.mesh_from].quats,
                translations[job.translation_from],
                &views.cameras[job.mesh_from],
            )?;
            let op = g.register_custom(Rc::new(RasterOp::new(
                faces.clone(),
                views.cameras[job.camera_of],
                *lights,
                *settings,
            )))?;
            let img = g.apply_custom(&op, &[world])?;
            let rgb = g.narrow(img, 0, 3)?;
            terms.push(mse_reconstruction(g, views.images[job.target], rgb)?);
        }
        let s = g.add(terms[0], terms[1])?;
        Ok(g.scale(s, 0.5)?)
    })?;
    let recon = mean4(g, per_view)?;
    let translation = translation_consistency_total(g, translations)?;
    let bg = stack(|i| background_loss(g, views.latents[i].prob, views.backgrounds[i]))?;
    let background = mean4(g, bg)?;

    let smooth_op = g.register_custom(Rc::new(SmoothnessOp::stacked(model.base_mesh(), n)?))?;
    let smoothness = if mix.is_some() {
        g.apply_custom(&smooth_op, &[local[0]])?
    } else {
        let s = stack(|i| Ok(g.apply_custom(&smooth_op, &[local[i]])?))?;
        mean4(g, s)?
    };

    let total = weighted_total(g, [recon, translation, background, smoothness], weights)?;
    Ok(QuadLoss {
        per_view,
        recon,
        translation,
        background,
        smoothness,
        total,
        translations,
    })
}

//! `derender render`: reconstruct one image and view it from elsewhere.

use std::path::Path;

use derender_core::dataset::Manifest;
use derender_core::geometry::{obj, Camera, TriangleMesh};
use derender_core::grad::Tensor;
use derender_core::model::Cerberus;
use derender_core::render::image::{read_rgb_png, write_rgb_png};
use derender_core::render::{rasterize, rasterize_colored, LightRig, RenderSettings};
use derender_core::training::Checkpoint;

use crate::commands::{create_dir, dataset_err, io_err, now, train_err, write_run_record};
use crate::config::{set, ConfigFile};
use crate::{CliError, RenderArgs};

const PALETTE: [[f64; 3]; 8] = [
    [0.90, 0.30, 0.25],
    [0.25, 0.60, 0.90],
    [0.35, 0.80, 0.35],
    [0.95, 0.75, 0.20],
    [0.70, 0.40, 0.85],
    [0.20, 0.80, 0.80],
    [0.95, 0.55, 0.70],
    [0.60, 0.60, 0.60],
];

/// `30deg`, `+90deg`, `-0.5rad` or a bare number of degrees, in radians.
pub fn parse_angle(text: &str) -> Result<f64, CliError> {
    let t = text.trim();
    let (num, scale) = if let Some(n) = t.strip_suffix("deg") {
        (n, std::f64::consts::PI / 180.0)
    } else if let Some(n) = t.strip_suffix("rad") {
        (n, 1.0)
    } else {
        (t, std::f64::consts::PI / 180.0)
    };
    let v: f64 = num
        .trim()
        .parse()
        .map_err(|_| CliError::User(format!("bad angle {text:?}; use e.g. 30deg or 0.5rad")))?;
    if !v.is_finite() {
        return Err(CliError::User(format!("bad angle {text:?}")));
    }
    Ok(v * scale)
}

fn render_err(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

fn load_image(path: &Path, size: usize) -> Result<Tensor, CliError> {
    let (w, h, rgb) = read_rgb_png(path).map_err(|e| CliError::User(e.to_string()))?;
    if (w, h) != (size, size) {
        return Err(CliError::User(format!(
            "{}: image is {w}x{h}, the model expects {size}x{size}",
            path.display()
        )));
    }
    Tensor::new([3, size, size], rgb).map_err(render_err)
}

pub fn render(file: &ConfigFile, a: RenderArgs) -> Result<(), CliError> {
    let started = now();
    let mut s = file.render.clone();
    s.checkpoint = a.checkpoint.or(s.checkpoint);
    s.image = a.image.or(s.image);
    set(&mut s.data, a.data);
    set(&mut s.input_azimuth, a.input_azimuth);
    set(&mut s.azimuth, a.azimuth);
    s.elevation = a.elevation.or(s.elevation);
    s.directional = a.directional.or(s.directional);
    s.ambient = a.ambient.or(s.ambient);
    s.recolor |= a.recolor;
    s.export_obj |= a.export_obj;
    set(&mut s.out, a.out);

    let ck_path = s.checkpoint.clone().ok_or_else(|| CliError::User("render needs --checkpoint".into()))?;
    let image_path = s.image.clone().ok_or_else(|| CliError::User("render needs --image".into()))?;
    let input_az = parse_angle(&s.input_azimuth)?;
    let offset = parse_angle(&s.azimuth)?;
    let elevation = s.elevation.as_deref().map(parse_angle).transpose()?;

    let (m, _) = Manifest::load(&s.data).map_err(dataset_err)?;
    let ck = Checkpoint::load(&ck_path).map_err(train_err)?;
    let model: Cerberus = ck.model().map_err(train_err)?;
    let size = model.config().image_size;
    if size != m.image_size {
        return Err(CliError::User(format!(
            "checkpoint expects {size}px images, dataset {} has {}px",
            s.data.display(),
            m.image_size
        )));
    }
    let lights = LightRig {
        directional: s.directional.unwrap_or(m.lights.directional),
        ambient: s.ambient.unwrap_or(m.lights.ambient),
    };
    lights.validate().map_err(|e| CliError::User(e.to_string()))?;

    let image = load_image(&image_path, size)?;
    let input_cam = m.camera(input_az).map_err(dataset_err)?;
    let bundle = model.encode(&image).map_err(render_err)?;
    let parts = model
        .assemble(&bundle, &bundle.shape_latent, &input_cam)
        .map_err(render_err)?;
    let meshes: Vec<TriangleMesh> = parts.world_meshes();

    let novel = Camera::new(
        input_az + offset,
        elevation.unwrap_or(m.camera.elevation),
        m.camera.distance,
        m.camera.focal,
        size,
        size,
    )
    .map_err(|e| CliError::User(e.to_string()))?;
    let settings = RenderSettings::default();
    let out = if s.recolor {
        let colors: Vec<[f64; 3]> = (0..meshes.len()).map(|k| PALETTE[k % PALETTE.len()]).collect();
        rasterize_colored(&meshes, &colors, &novel, &lights, &settings)
    } else {
        rasterize(&meshes, &novel, &lights, &settings)
    }
    .map_err(render_err)?;

    create_dir(&s.out)?;
    let png = s.out.join("render.png");
    write_rgb_png(&png, out.width, out.height, &out.rgb).map_err(|e| io_err(&png, e))?;
    println!("wrote {}", png.display());
    if s.export_obj {
        let dir = s.out.join("parts");
        create_dir(&dir)?;
        for (k, mesh) in meshes.iter().enumerate() {
            let path = dir.join(format!("part_{k}.obj"));
            obj::write_obj(&path, std::slice::from_ref(mesh)).map_err(|e| io_err(&path, e))?;
        }
        println!("wrote {} part meshes to {}", meshes.len(), dir.display());
    }
    write_run_record(&s.out, "render", &s, started)
}

//! 8-bit PNG I/O for planar `[3, H, W]` images in `[0, 1]` and 1-bit masks.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::RenderError;

fn io_err(path: &Path, e: impl std::fmt::Display) -> RenderError {
    RenderError::Image(format!("{}: {e}", path.display()))
}

fn to_byte(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    data: &[u8],
) -> Result<(), RenderError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let mut writer = enc.write_header().map_err(|e| io_err(path, e))?;
    writer.write_image_data(data).map_err(|e| io_err(path, e))?;
    writer.finish().map_err(|e| io_err(path, e))
}

/// Write planar rgb as interleaved 8-bit RGB.
pub fn write_rgb_png(path: &Path, width: usize, height: usize, rgb: &[f64]) -> Result<(), RenderError> {
    let plane = width * height;
    if rgb.len() != 3 * plane {
        return Err(io_err(path, format!("expected {} values, got {}", 3 * plane, rgb.len())));
    }
    let bytes: Vec<u8> = (0..plane)
        .flat_map(|i| [to_byte(rgb[i]), to_byte(rgb[plane + i]), to_byte(rgb[2 * plane + i])])
        .collect();
    encode(path, width, height, png::ColorType::Rgb, png::BitDepth::Eight, &bytes)
}

/// Write a boolean mask as a 1-bit grayscale PNG (white = true).
pub fn write_mask_png(path: &Path, width: usize, height: usize, mask: &[bool]) -> Result<(), RenderError> {
    if mask.len() != width * height {
        return Err(io_err(path, "mask size mismatch"));
    }
    let stride = width.div_ceil(8);
    let mut bytes = vec![0u8; stride * height];
    for (i, &m) in mask.iter().enumerate() {
        if m {
            let (y, x) = (i / width, i % width);
            bytes[y * stride + x / 8] |= 0x80 >> (x % 8);
        }
    }
    encode(path, width, height, png::ColorType::Grayscale, png::BitDepth::One, &bytes)
}

struct Decoded {
    width: usize,
    height: usize,
    channels: usize,
    /// One byte per sample after expansion to 8 bits.
    data: Vec<u8>,
}

fn decode(path: &Path) -> Result<Decoded, RenderError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| io_err(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| io_err(path, e))?;
    buf.truncate(info.buffer_size());
    let channels = info.color_type.samples();
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        channels,
        data: buf,
    })
}

/// Read any 8-bit PNG as planar rgb in `[0, 1]`; returns `(width, height, rgb)`.
pub fn read_rgb_png(path: &Path) -> Result<(usize, usize, Vec<f64>), RenderError> {
    let d = decode(path)?;
    let plane = d.width * d.height;
    let mut rgb = vec![0.0; 3 * plane];
    for i in 0..plane {
        let px = &d.data[i * d.channels..(i + 1) * d.channels];
        for c in 0..3 {
            let s = if d.channels >= 3 { px[c] } else { px[0] };
            rgb[c * plane + i] = s as f64 / 255.0;
        }
    }
    Ok((d.width, d.height, rgb))
}

/// Read a mask PNG; a pixel is set when its first channel is nonzero.
pub fn read_mask_png(path: &Path) -> Result<(usize, usize, Vec<bool>), RenderError> {
    let d = decode(path)?;
    let mask = d.data.chunks_exact(d.channels).map(|px| px[0] > 0).collect();
    Ok((d.width, d.height, mask))
}

use std::path::Path;

use anyhow::Context;
use deco_core::{Scalar, Tensor};

/// `[−1, 1]` → `0..=255`, rounding halves up; out-of-range values clip.
pub fn to_u8(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5 + 0.5).floor() as u8
}

pub fn write_png(path: &Path, width: usize, height: usize, pixels: &[f32]) -> anyhow::Result<()> {
    let bytes: Vec<u8> = pixels.iter().map(|&v| to_u8(f64::from(v))).collect();
    write_png_u8(path, width, height, bytes)
}

pub fn write_png_u8(path: &Path, width: usize, height: usize, rgb: Vec<u8>) -> anyhow::Result<()> {
    let img = image::RgbImage::from_raw(width as u32, height as u32, rgb).context("pixel buffer does not match the image size")?;
    img.save(path).with_context(|| format!("writing {}", path.display()))
}

/// Tiles `[N, H, W, 3]` into a grid `cols` images wide with a 1-pixel
/// gutter; returns `(width, height, rgb bytes)`.
pub fn image_grid<T: Scalar>(images: &Tensor<T>, cols: usize) -> (usize, usize, Vec<u8>) {
    let s = images.shape();
    let (n, h, w) = (s[0], s[1], s[2]);
    let cols = cols.clamp(1, n.max(1));
    let rows = n.div_ceil(cols);
    let (gw, gh) = (cols * (w + 1) + 1, rows * (h + 1) + 1);
    let mut out = vec![255u8; gw * gh * 3];
    for i in 0..n {
        let (oy, ox) = ((i / cols) * (h + 1) + 1, (i % cols) * (w + 1) + 1);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let v = images.data()[((i * h + y) * w + x) * 3 + c].to_f64().unwrap();
                    out[((oy + y) * gw + ox + x) * 3 + c] = to_u8(v);
                }
            }
        }
    }
    (gw, gh, out)
}

/// Nearest-neighbour enlargement of an RGB byte image.
pub fn upscale(rgb: &[u8], width: usize, height: usize, factor: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(rgb.len() * factor * factor);
    for y in 0..height * factor {
        for x in 0..width * factor {
            let i = ((y / factor) * width + x / factor) * 3;
            out.extend_from_slice(&rgb[i..i + 3]);
        }
    }
    out
}

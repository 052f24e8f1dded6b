//! Labeled image sets: the synthetic shapes generator and image folders.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use deco_core::Tensor;
use image::imageops::FilterType;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Images `[N, H, W, 3]` in `[−1, 1]` with one class label each.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImages {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledImages {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Stacks the chosen images into a batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let s = self.images.shape();
        let per = s[1] * s[2] * s[3];
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        let images = Tensor::new([indices.len(), s[1], s[2], s[3]], data).expect("consistent batch");
        (images, indices.iter().map(|&i| self.labels[i]).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

pub const SHAPES: [Shape; 3] = [Shape::Circle, Shape::Square, Shape::Triangle];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub image_size: usize,
    pub count: usize,
    /// Standard deviation of the Gaussian noise on the gray background.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 8,
            image_size: 32,
            count: 4096,
            noise: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.num_classes == 0 {
            out.push("synthetic num_classes must be positive".to_string());
        }
        if self.image_size < 8 {
            out.push(format!("synthetic image_size must be at least 8, got {}", self.image_size));
        }
        if self.count == 0 {
            out.push("synthetic count must be positive".to_string());
        }
        if !(self.noise >= 0.0) {
            out.push("synthetic noise must be non-negative".to_string());
        }
        out
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let sector = h6.floor() as u32 % 6;
    let f = h6 - h6.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Foreground color of class `k`, in `[−1, 1]`: hue `k/K` at fixed
/// saturation 0.85 and value 0.9.
pub fn class_color(k: usize, num_classes: usize) -> [f64; 3] {
    hsv_to_rgb(k as f64 / num_classes as f64, 0.85, 0.9).map(|c| 2.0 * c - 1.0)
}

fn inside(shape: Shape, x: f64, y: f64, cx: f64, cy: f64, r: f64) -> bool {
    let (dx, dy) = (x - cx, y - cy);
    match shape {
        Shape::Circle => dx * dx + dy * dy <= r * r,
        Shape::Square => dx.abs() <= 0.85 * r && dy.abs() <= 0.85 * r,
        // apex up: half-width grows linearly from 0 at the top to r at the base
        Shape::Triangle => dy.abs() <= r && dx.abs() <= 0.5 * (dy + r),
    }
}

/// One noisy gray background with a single filled shape in the class color
/// per image. Labels cycle through the classes, so each gets `count / K`
/// images when `K` divides `count`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> anyhow::Result<LabeledImages> {
    let problems = spec.violations();
    if !problems.is_empty() {
        bail!("invalid synthetic spec: {}", problems.join("; "));
    }
    let n = spec.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut data = Vec::with_capacity(spec.count * n * n * 3);
    let mut labels = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let k = i % spec.num_classes;
        let color = class_color(k, spec.num_classes);
        let shape = SHAPES[rng.random_range(0..SHAPES.len())];
        let size = n as f64;
        let r = rng.random_range(0.2..0.35) * size;
        let cx = rng.random_range(r..size - r);
        let cy = rng.random_range(r..size - r);
        for y in 0..n {
            for x in 0..n {
                let fg = inside(shape, x as f64 + 0.5, y as f64 + 0.5, cx, cy, r);
                for c in color {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    let v = if fg { c } else { (spec.noise * noise).clamp(-1.0, 1.0) };
                    data.push(v as f32);
                }
            }
        }
        labels.push(k);
    }
    Ok(LabeledImages {
        images: Tensor::new([spec.count, n, n, 3], data)?,
        labels,
        num_classes: spec.num_classes,
    })
}

/// Mean color of the pixels that stand out from the gray background, or
/// `None` when there are none.
pub fn foreground_mean(image: &[f32]) -> Option<[f64; 3]> {
    let mut sum = [0.0; 3];
    let mut count = 0usize;
    for px in image.chunks_exact(3) {
        let max = px.iter().copied().fold(f32::MIN, f32::max);
        let min = px.iter().copied().fold(f32::MAX, f32::min);
        // chroma in [0, 1] units
        if (max - min) / 2.0 > 0.25 {
            for (s, &v) in sum.iter_mut().zip(px) {
                *s += f64::from(v);
            }
            count += 1;
        }
    }
    (count > 0).then(|| sum.map(|s| s / count as f64))
}

/// Class whose color is closest to the foreground mean of `image`.
pub fn classify_by_color(image: &[f32], num_classes: usize) -> Option<usize> {
    let mean = foreground_mean(image)?;
    (0..num_classes).min_by(|&a, &b| {
        let da = dist2(&mean, &class_color(a, num_classes));
        let db = dist2(&mean, &class_color(b, num_classes));
        da.total_cmp(&db)
    })
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn class_dirs(root: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(root).with_context(|| format!("reading {}", root.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            dirs.push(path);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        bail!("{} has no class subdirectories", root.display());
    }
    Ok(dirs)
}

/// Decodes `root/<class>/<image>` files, center-crops to a square, resizes
/// to `size` and maps `[0, 255]` to `[−1, 1]`. Classes and files are taken
/// in sorted path order.
pub fn load_image_directory(root: &Path, size: usize) -> anyhow::Result<LabeledImages> {
    let dirs = class_dirs(root)?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (label, dir) in dirs.iter().enumerate() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        files.retain(|p| p.is_file());
        files.sort();
        if files.is_empty() {
            bail!("class directory {} is empty", dir.display());
        }
        for file in files {
            let img = image::open(&file).with_context(|| format!("cannot read image {}", file.display()))?;
            let (w, h) = (img.width(), img.height());
            let side = w.min(h);
            let cropped = img.crop_imm((w - side) / 2, (h - side) / 2, side, side).to_rgb8();
            let resized = if side as usize == size {
                cropped
            } else {
                image::imageops::resize(&cropped, size as u32, size as u32, FilterType::Triangle)
            };
            data.extend(resized.as_raw().iter().map(|&v| f32::from(v) / 127.5 - 1.0));
            labels.push(label);
        }
    }
    Ok(LabeledImages {
        images: Tensor::new([labels.len(), size, size, 3], data)?,
        labels,
        num_classes: dirs.len(),
    })
}

/// Writes one PNG per image under `root/class_XX/`.
pub fn write_image_directory(set: &LabeledImages, root: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let s = set.images.shape();
    let per = s[1] * s[2] * 3;
    let mut written = Vec::with_capacity(set.len());
    for (i, &label) in set.labels.iter().enumerate() {
        let dir = root.join(format!("class_{label:02}"));
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(format!("img_{i:06}.png"));
        let pixels = &set.images.data()[i * per..(i + 1) * per];
        crate::export::write_png(&path, s[2], s[1], pixels)?;
        written.push(path);
    }
    Ok(written)
}

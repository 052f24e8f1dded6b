//! Block-DCT energy spectra and K-means maps of feature grids.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::freq::{block_dct, zigzag, BLOCK};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Energy per zigzag frequency index, pooled over blocks and channels.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergySpectrum {
    pub block: usize,
    /// `log(1 + e) / max log(1 + e)`, in zigzag order.
    pub values: Vec<f64>,
    /// Mean energy per index before the log scaling.
    pub energies: Vec<f64>,
    /// Number of (block, channel) pairs accumulated.
    pub blocks: usize,
}

/// Streaming form of [`dct_energy_spectrum`].
#[derive(Debug, Clone)]
pub struct SpectrumAccumulator {
    block: usize,
    order: Vec<(usize, usize)>,
    sums: Vec<f64>,
    blocks: usize,
}

impl SpectrumAccumulator {
    pub fn new(block: usize) -> Result<Self> {
        if block == 0 {
            return Err(Error::invalid("spectrum", "block size must be positive"));
        }
        Ok(SpectrumAccumulator {
            block,
            order: zigzag(block),
            sums: vec![0.0; block * block],
            blocks: 0,
        })
    }

    /// Adds every channel of one `[H, W, C]` tensor.
    pub fn add<T: Scalar>(&mut self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        if s.len() != 3 {
            return Err(Error::invalid("spectrum", format!("expected [H, W, C], got {s:?}")));
        }
        let (h, w, c) = (s[0], s[1], s[2]);
        for &extent in &[h, w] {
            if extent % self.block != 0 {
                return Err(Error::Indivisible {
                    op: "spectrum",
                    extent,
                    divisor: self.block,
                });
            }
        }
        let n = self.block;
        for ch in 0..c {
            let plane: Tensor<f64> = Tensor::from_fn([h, w], |i| x.data()[i * c + ch].to_f64().unwrap());
            let coeffs = block_dct(&plane, n)?;
            let (by, bx) = coeffs.blocks();
            for y in 0..by {
                for xb in 0..bx {
                    let blk = coeffs.block_at(y, xb);
                    for (slot, &(u, v)) in self.sums.iter_mut().zip(&self.order) {
                        let e = blk[u * n + v];
                        *slot += e * e;
                    }
                    self.blocks += 1;
                }
            }
        }
        Ok(())
    }

    pub fn finish(&self) -> EnergySpectrum {
        let count = self.blocks.max(1) as f64;
        let energies: Vec<f64> = self.sums.iter().map(|s| s / count).collect();
        let logs: Vec<f64> = energies.iter().map(|e| e.ln_1p()).collect();
        let max = logs.iter().copied().fold(0.0, f64::max);
        let values = if max > 0.0 { logs.iter().map(|l| l / max).collect() } else { logs };
        EnergySpectrum {
            block: self.block,
            values,
            energies,
            blocks: self.blocks,
        }
    }
}

/// Spectrum of a sequence of `[H, W, C]` tensors; `block` defaults to 8.
pub fn dct_energy_spectrum<T: Scalar>(tensors: &[Tensor<T>], block: Option<usize>) -> Result<EnergySpectrum> {
    let mut acc = SpectrumAccumulator::new(block.unwrap_or(BLOCK))?;
    for t in tensors {
        acc.add(t)?;
    }
    Ok(acc.finish())
}

/// Share of raw energy at zigzag indices `≥ cutoff`.
pub fn highfreq_fraction(energies: &[f64], cutoff: usize) -> Result<f64> {
    let total: f64 = energies.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("highfreq_fraction", "total energy is zero"));
    }
    Ok(energies.iter().skip(cutoff).sum::<f64>() / total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub labels: Vec<usize>,
    /// `[k, d]`
    pub centroids: Vec<Vec<f64>>,
    /// Inertia after each assignment pass.
    pub inertia: Vec<f64>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Lloyd's algorithm on the rows of `points` (`[n, d]`). The first centre
/// is a seeded random point, each further one the point farthest from the
/// centres so far. A cluster that empties is re-seeded with the point
/// farthest from its current centre.
pub fn kmeans<T: Scalar>(points: &Tensor<T>, k: usize, seed: u64, max_iter: usize) -> Result<KMeans> {
    if points.rank() != 2 {
        return Err(Error::invalid("kmeans", format!("expected [n, d], got {:?}", points.shape())));
    }
    let (n, d) = (points.shape()[0], points.shape()[1]);
    if k == 0 || n < k {
        return Err(Error::invalid("kmeans", format!("need at least k = {k} points, got {n}")));
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| points.data()[i * d..(i + 1) * d].iter().map(|v| v.to_f64().unwrap()).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![rows[rng.random_range(0..n)].clone()];
    let mut closest: Vec<f64> = rows.iter().map(|r| dist2(r, &centroids[0])).collect();
    while centroids.len() < k {
        let far = argmax(&closest);
        centroids.push(rows[far].clone());
        for (c, r) in closest.iter_mut().zip(&rows) {
            *c = c.min(dist2(r, centroids.last().unwrap()));
        }
    }

    let mut labels = vec![usize::MAX; n];
    let mut inertia = Vec::new();
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        let mut dists = vec![0.0; n];
        for (i, r) in rows.iter().enumerate() {
            let (l, dd) = nearest(r, &centroids);
            changed |= labels[i] != l;
            labels[i] = l;
            dists[i] = dd;
        }
        inertia.push(dists.iter().sum());
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (r, &l) in rows.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(r) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                let far = argmax(&rows.iter().map(|r| nearest(r, &centroids).1).collect::<Vec<_>>());
                centroids[j] = rows[far].clone();
            }
        }
    }
    Ok(KMeans {
        labels,
        centroids,
        inertia,
    })
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Fixed colors for cluster labels (cycled beyond 8).
pub const PALETTE: [[u8; 3]; 8] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
];

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterFrame {
    /// Index into the time axis of the input.
    pub frame: usize,
    pub height: usize,
    pub width: usize,
    pub labels: Vec<usize>,
    /// Row-major RGB pixels.
    pub rgb: Vec<u8>,
}

/// Indices of `count` frames spread uniformly over `total`.
pub fn uniform_frames(total: usize, count: usize) -> Vec<usize> {
    if count <= 1 {
        return vec![0; count.min(total)];
    }
    (0..count)
        .map(|i| ((i * (total - 1)) as f64 / (count - 1) as f64).round() as usize)
        .collect()
}

/// Clusters each selected frame of a `[T, H, W, C]` feature sequence.
pub fn feature_cluster_map<T: Scalar>(features: &Tensor<T>, k: usize, num_frames: usize, seed: u64) -> Result<Vec<ClusterFrame>> {
    let s = features.shape();
    if s.len() != 4 {
        return Err(Error::invalid("feature_cluster_map", format!("expected [T, H, W, C], got {s:?}")));
    }
    let (t, h, w, c) = (s[0], s[1], s[2], s[3]);
    if t < num_frames {
        return Err(Error::invalid("feature_cluster_map", format!("{t} frames available, {num_frames} requested")));
    }
    uniform_frames(t, num_frames)
        .into_iter()
        .map(|frame| {
            let points = features.index0(frame)?.reshape([h * w, c])?;
            let km = kmeans(&points, k, seed, 100)?;
            let rgb = km.labels.iter().flat_map(|&l| PALETTE[l % PALETTE.len()]).collect();
            Ok(ClusterFrame {
                frame,
                height: h,
                width: w,
                labels: km.labels,
                rgb,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_has_only_dc() {
        let x: Tensor<f64> = Tensor::full([16, 8, 3], 0.7);
        let s = dct_energy_spectrum(&[x], None).unwrap();
        assert_eq!(s.blocks, 6);
        assert!((s.values[0] - 1.0).abs() < 1e-12);
        assert!(s.values[1..].iter().all(|&v| v.abs() < 1e-12));
        assert!(highfreq_fraction(&s.energies, 32).unwrap() < 1e-20);
    }

    #[test]
    fn zero_energy_rejected() {
        assert!(highfreq_fraction(&[0.0; 64], 32).is_err());
        let mut e = vec![0.0; 64];
        e[63] = 2.0;
        assert_eq!(highfreq_fraction(&e, 32).unwrap(), 1.0);
    }

    #[test]
    fn indivisible_without_override() {
        let x: Tensor<f64> = Tensor::zeros([4, 4, 1]);
        assert!(dct_energy_spectrum(std::slice::from_ref(&x), None).is_err());
        assert_eq!(dct_energy_spectrum(&[x], Some(4)).unwrap().values.len(), 16);
    }

    #[test]
    fn kmeans_single_cluster_is_mean() {
        let p = Tensor::<f64>::from_f64([3, 2], &[0., 0., 1., 2., 2., 4.]).unwrap();
        let km = kmeans(&p, 1, 0, 10).unwrap();
        assert_eq!(km.labels, vec![0, 0, 0]);
        assert_eq!(km.centroids[0], vec![1.0, 2.0]);
        assert!(kmeans(&p, 4, 0, 10).is_err());
    }

    #[test]
    fn frame_selection() {
        assert_eq!(uniform_frames(4, 4), vec![0, 1, 2, 3]);
        assert_eq!(uniform_frames(100, 4), vec![0, 33, 66, 99]);
    }
}

//! Color-space conversion, orthonormal block DCT, zigzag scan and JPEG
//! quantization-table weighting.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BLOCK: usize = 8;

/// Full-range BT.601 (JPEG) RGB → YCbCr, without the +128 chroma offset.
pub const RGB_TO_YCBCR: [[f64; 3]; 3] = [
    [0.299, 0.587, 0.114],
    [-0.168_736, -0.331_264, 0.5],
    [0.5, -0.418_688, -0.081_312],
];

/// Standard luminance table (ITU T.81 Annex K), natural row-major order.
pub const BASE_LUMA: [[u16; 8]; 8] = [
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
];

/// Standard chrominance table (ITU T.81 Annex K), natural row-major order.
pub const BASE_CHROMA: [[u16; 8]; 8] = [
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
];

fn ycbcr_to_rgb_matrix() -> [[f64; 3]; 3] {
    static INV: OnceLock<[[f64; 3]; 3]> = OnceLock::new();
    *INV.get_or_init(|| invert3(&RGB_TO_YCBCR))
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let det = m[0][0] * cof(1, 2, 1, 2) - m[0][1] * cof(1, 2, 0, 2) + m[0][2] * cof(1, 2, 0, 1);
    [
        [cof(1, 2, 1, 2) / det, -cof(0, 2, 1, 2) / det, cof(0, 1, 1, 2) / det],
        [-cof(1, 2, 0, 2) / det, cof(0, 2, 0, 2) / det, -cof(0, 1, 0, 2) / det],
        [cof(1, 2, 0, 1) / det, -cof(0, 2, 0, 1) / det, cof(0, 1, 0, 1) / det],
    ]
}

fn apply_color<T: Scalar>(v: &Tensor<T>, m: &[[f64; 3]; 3]) -> Result<Tensor<T>> {
    if v.shape().last() != Some(&3) {
        return Err(Error::invalid(
            "rgb_to_ycbcr",
            format!("expected 3 channels in the last axis, got shape {:?}", v.shape()),
        ));
    }
    let m: Vec<T> = m.iter().flatten().map(|&x| T::lit(x)).collect();
    let mut out = Vec::with_capacity(v.len());
    for px in v.data().chunks_exact(3) {
        for r in 0..3 {
            out.push(m[3 * r] * px[0] + m[3 * r + 1] * px[1] + m[3 * r + 2] * px[2]);
        }
    }
    Tensor::new(v.shape().to_vec(), out)
}

/// Linear RGB → YCbCr on the last axis. Works on signed, zero-centred data.
pub fn rgb_to_ycbcr<T: Scalar>(v: &Tensor<T>) -> Result<Tensor<T>> {
    apply_color(v, &RGB_TO_YCBCR)
}

pub fn ycbcr_to_rgb<T: Scalar>(v: &Tensor<T>) -> Result<Tensor<T>> {
    apply_color(v, &ycbcr_to_rgb_matrix())
}

/// The transposed color matrix as a `[3, 3]` tensor, for use as the right
/// operand of a matmul over the channel axis.
pub fn rgb_to_ycbcr_operand<T: Scalar>() -> Tensor<T> {
    Tensor::from_fn([3, 3], |i| T::lit(RGB_TO_YCBCR[i % 3][i / 3]))
}

/// Orthonormal DCT-II basis, `basis[u * n + x] = α(u)·cos((2x+1)uπ / 2n)`.
pub fn dct_basis(n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    let nf = n as f64;
    for u in 0..n {
        let alpha = if u == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        for x in 0..n {
            out[u * n + x] = alpha * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / (2.0 * nf)).cos();
        }
    }
    out
}

fn basis_for<T: Scalar>(n: usize) -> Vec<T> {
    dct_basis(n).into_iter().map(T::lit).collect()
}

/// Transforms one row-major `n×n` block in place. `inverse` applies Cᵀ·X·C.
fn transform_block<T: Scalar>(block: &mut [T], n: usize, basis: &[T], tmp: &mut [T], inverse: bool) {
    // rows then columns: Y = C·X·Cᵀ
    for r in 0..n {
        for u in 0..n {
            let mut acc = T::zero();
            for x in 0..n {
                let c = if inverse { basis[x * n + u] } else { basis[u * n + x] };
                acc += c * block[r * n + x];
            }
            tmp[r * n + u] = acc;
        }
    }
    for c in 0..n {
        for u in 0..n {
            let mut acc = T::zero();
            for y in 0..n {
                let b = if inverse { basis[y * n + u] } else { basis[u * n + y] };
                acc += b * tmp[y * n + c];
            }
            block[u * n + c] = acc;
        }
    }
}

/// Block-transforms a `[..., H, W, C]` tensor over its two spatial axes,
/// channel by channel. Coefficient `(u, v)` of the block at `(by, bx)` is
/// stored at spatial position `(by·n + u, bx·n + v)`.
pub fn block_dct_nhwc<T: Scalar>(x: &Tensor<T>, block: usize, inverse: bool) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() < 3 {
        return Err(Error::invalid("block_dct", format!("expected [..., H, W, C], got {s:?}")));
    }
    let r = s.len();
    let (h, w, c) = (s[r - 3], s[r - 2], s[r - 1]);
    check_divisible("block_dct", h, block)?;
    check_divisible("block_dct", w, block)?;
    let basis = basis_for::<T>(block);
    let mut out = x.clone();
    let data = out.data_mut();
    let plane = h * w * c;
    let mut buf = vec![T::zero(); block * block];
    let mut tmp = vec![T::zero(); block * block];
    for img in data.chunks_exact_mut(plane.max(1)) {
        for ch in 0..c {
            for by in (0..h).step_by(block) {
                for bx in (0..w).step_by(block) {
                    for i in 0..block {
                        for j in 0..block {
                            buf[i * block + j] = img[((by + i) * w + bx + j) * c + ch];
                        }
                    }
                    transform_block(&mut buf, block, &basis, &mut tmp, inverse);
                    for i in 0..block {
                        for j in 0..block {
                            img[((by + i) * w + bx + j) * c + ch] = buf[i * block + j];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

fn check_divisible(op: &'static str, extent: usize, divisor: usize) -> Result<()> {
    if divisor == 0 || !extent.is_multiple_of(divisor) {
        return Err(Error::Indivisible { op, extent, divisor });
    }
    Ok(())
}

/// Per-block transform coefficients of a single plane.
#[derive(Debug, Clone, PartialEq)]
pub struct DctCoefficients<T> {
    pub block: usize,
    /// Same layout as the source plane: coefficient `(u, v)` of block
    /// `(by, bx)` sits at `(by·block + u, bx·block + v)`.
    pub coeffs: Tensor<T>,
}

impl<T: Scalar> DctCoefficients<T> {
    /// The `block×block` coefficients of block `(by, bx)`, row-major.
    pub fn block_at(&self, by: usize, bx: usize) -> Vec<T> {
        let w = self.coeffs.shape()[1];
        let n = self.block;
        let mut out = Vec::with_capacity(n * n);
        for u in 0..n {
            for v in 0..n {
                out.push(self.coeffs.data()[(by * n + u) * w + bx * n + v]);
            }
        }
        out
    }

    pub fn blocks(&self) -> (usize, usize) {
        (self.coeffs.shape()[0] / self.block, self.coeffs.shape()[1] / self.block)
    }
}

/// Orthonormal type-II DCT on every non-overlapping `block×block` tile of
/// a `[H, W]` plane. No padding: both extents must be multiples of `block`.
pub fn block_dct<T: Scalar>(plane: &Tensor<T>, block: usize) -> Result<DctCoefficients<T>> {
    let s = plane.shape();
    if s.len() != 2 {
        return Err(Error::invalid("block_dct", format!("expected a [H, W] plane, got {s:?}")));
    }
    let as_nhwc = plane.clone().reshape([s[0], s[1], 1])?;
    let coeffs = block_dct_nhwc(&as_nhwc, block, false)?.reshape(s.to_vec())?;
    Ok(DctCoefficients { block, coeffs })
}

pub fn inverse_block_dct<T: Scalar>(coeffs: &DctCoefficients<T>) -> Result<Tensor<T>> {
    let s = coeffs.coeffs.shape().to_vec();
    let as_nhwc = coeffs.coeffs.clone().reshape([s[0], s[1], 1])?;
    block_dct_nhwc(&as_nhwc, coeffs.block, true)?.reshape(s)
}

/// JPEG zigzag scan of an `n×n` block: entry `i` is the `(row, col)` of
/// the `i`-th coefficient from low to high frequency.
pub fn zigzag(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n * n);
    for s in 0..(2 * n).saturating_sub(1) {
        let lo = s.saturating_sub(n - 1);
        let hi = s.min(n - 1);
        if s % 2 == 0 {
            // moving up-right: row decreasing
            for r in (lo..=hi).rev() {
                out.push((r, s - r));
            }
        } else {
            for r in lo..=hi {
                out.push((r, s - r));
            }
        }
    }
    out
}

/// The 64-entry zigzag scan for 8×8 blocks.
pub fn zigzag_order() -> [(usize, usize); 64] {
    let v = zigzag(BLOCK);
    let mut out = [(0, 0); 64];
    out.copy_from_slice(&v);
    out
}

/// Base and quality-scaled quantization tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantTables {
    pub quality: u8,
    pub base_luma: [[u16; 8]; 8],
    pub base_chroma: [[u16; 8]; 8],
    pub scaled_luma: [[u16; 8]; 8],
    pub scaled_chroma: [[u16; 8]; 8],
}

fn scale_entry(base: u16, q: u32) -> u16 {
    let v = (u32::from(base) * (100 - q) + 25) / 50;
    v.max(1) as u16
}

fn scale_table(base: &[[u16; 8]; 8], q: u32) -> [[u16; 8]; 8] {
    let mut out = [[0; 8]; 8];
    for (dst, src) in out.iter_mut().flatten().zip(base.iter().flatten()) {
        *dst = scale_entry(*src, q);
    }
    out
}

/// `Q_cur = max(1, ⌊(Q_base·(100−q) + 25) / 50⌋)` for `50 ≤ q ≤ 100`.
pub fn scale_quant_tables(quality: i64) -> Result<QuantTables> {
    if !(50..=100).contains(&quality) {
        return Err(Error::QualityOutOfRange(quality));
    }
    let q = quality as u32;
    Ok(QuantTables {
        quality: quality as u8,
        base_luma: BASE_LUMA,
        base_chroma: BASE_CHROMA,
        scaled_luma: scale_table(&BASE_LUMA, q),
        scaled_chroma: scale_table(&BASE_CHROMA, q),
    })
}

/// Normalized reciprocal quantization weights; Cb and Cr share `chroma`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyWeightSet {
    pub luma: [[f64; 8]; 8],
    pub chroma: [[f64; 8]; 8],
}

fn reciprocal_weights(table: &[[u16; 8]; 8]) -> [[f64; 8]; 8] {
    let mean = table.iter().flatten().map(|&q| 1.0 / f64::from(q)).sum::<f64>() / 64.0;
    let mut out = [[0.0; 8]; 8];
    for (dst, &q) in out.iter_mut().flatten().zip(table.iter().flatten()) {
        *dst = (1.0 / f64::from(q)) / mean;
    }
    out
}

pub fn frequency_weights(tables: &QuantTables) -> FrequencyWeightSet {
    FrequencyWeightSet {
        luma: reciprocal_weights(&tables.scaled_luma),
        chroma: reciprocal_weights(&tables.scaled_chroma),
    }
}

impl FrequencyWeightSet {
    pub fn for_quality(quality: i64) -> Result<Self> {
        Ok(frequency_weights(&scale_quant_tables(quality)?))
    }

    /// Tiles the tables into a `[H, W, 3]` tensor aligned with the output of
    /// [`block_dct_nhwc`] on YCbCr data.
    pub fn tile<T: Scalar>(&self, height: usize, width: usize) -> Result<Tensor<T>> {
        check_divisible("frequency weights", height, BLOCK)?;
        check_divisible("frequency weights", width, BLOCK)?;
        Ok(Tensor::from_fn([height, width, 3], |i| {
            let ch = i % 3;
            let x = (i / 3) % width;
            let y = i / (3 * width);
            let table = if ch == 0 { &self.luma } else { &self.chroma };
            T::lit(table[y % BLOCK][x % BLOCK])
        }))
    }
}

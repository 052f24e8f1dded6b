//! The two-part generator (DiT semantic trunk + pixel decoder) and the
//! single-model baseline that ends in an unpatchify head instead.

mod decoder;
mod dit;
pub mod layers;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use decoder::{DecoderBlock, PixelDecoder};
pub use dit::{TrunkOutput, DiT};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use layers::{chunk, modulate, Linear};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiTConfig {
    pub depth: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub patch_size: usize,
    /// Number of real classes; label `num_classes` is the null class.
    pub num_classes: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub channels: usize,
    /// SwiGLU hidden width; 0 picks `8·D/3` rounded up to a multiple of 8.
    #[serde(default)]
    pub ffn_hidden: usize,
    #[serde(default = "default_dit_time_freq")]
    pub time_freq_dim: usize,
}

fn default_dit_time_freq() -> usize {
    256
}

impl Default for DiTConfig {
    fn default() -> Self {
        DiTConfig {
            depth: 4,
            hidden_dim: 128,
            heads: 4,
            patch_size: 4,
            num_classes: 8,
            image_height: 32,
            image_width: 32,
            channels: 3,
            ffn_hidden: 0,
            time_freq_dim: 256,
        }
    }
}

impl DiTConfig {
    pub fn grid(&self) -> (usize, usize) {
        (self.image_height / self.patch_size, self.image_width / self.patch_size)
    }

    pub fn ffn_dim(&self) -> usize {
        if self.ffn_hidden > 0 {
            self.ffn_hidden
        } else {
            (8 * self.hidden_dim / 3).div_ceil(8) * 8
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.depth == 0 {
            out.push("dit.depth must be at least 1".to_string());
        }
        if self.hidden_dim == 0 || self.heads == 0 || !self.hidden_dim.is_multiple_of(self.heads) {
            out.push(format!("dit.hidden_dim ({}) must be a positive multiple of dit.heads ({})", self.hidden_dim, self.heads));
        } else if !(self.hidden_dim / self.heads).is_multiple_of(4) {
            out.push(format!(
                "dit head dimension ({}) must be divisible by 4 for 2-D rotary encoding",
                self.hidden_dim / self.heads
            ));
        }
        if self.patch_size == 0 || !self.image_height.is_multiple_of(self.patch_size) || !self.image_width.is_multiple_of(self.patch_size) {
            out.push(format!(
                "image extents {}x{} must be divisible by dit.patch_size ({})",
                self.image_height, self.image_width, self.patch_size
            ));
        }
        if self.channels == 0 {
            out.push("channels must be positive".to_string());
        }
        if self.time_freq_dim < 2 || !self.time_freq_dim.is_multiple_of(2) {
            out.push("dit.time_freq_dim must be a positive even number".to_string());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub hidden_dim: usize,
    pub depth: usize,
    pub patch_size: usize,
    #[serde(default = "default_pos_dim")]
    pub pos_dim: usize,
    #[serde(default = "default_decoder_time_freq")]
    pub time_freq_dim: usize,
}

fn default_pos_dim() -> usize {
    32
}

fn default_decoder_time_freq() -> usize {
    64
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            hidden_dim: 32,
            depth: 3,
            patch_size: 1,
            pos_dim: 32,
            time_freq_dim: 64,
        }
    }
}

impl DecoderConfig {
    pub fn violations(&self, dit: &DiTConfig) -> Vec<String> {
        let mut out = Vec::new();
        if self.hidden_dim == 0 {
            out.push("decoder.hidden_dim must be positive".to_string());
        }
        if self.depth == 0 {
            out.push("decoder.depth must be at least 1".to_string());
        }
        let s = self.patch_size;
        if s == 0 || !dit.image_height.is_multiple_of(s) || !dit.image_width.is_multiple_of(s) {
            out.push(format!(
                "image extents {}x{} must be divisible by decoder.patch_size ({s})",
                dit.image_height, dit.image_width
            ));
        } else if !dit.patch_size.is_multiple_of(s) {
            out.push(format!("dit.patch_size ({}) must be a multiple of decoder.patch_size ({s})", dit.patch_size));
        }
        if !self.pos_dim.is_multiple_of(4) || self.pos_dim == 0 {
            out.push("decoder.pos_dim must be a positive multiple of 4".to_string());
        }
        if self.time_freq_dim < 2 || !self.time_freq_dim.is_multiple_of(2) {
            out.push("decoder.time_freq_dim must be a positive even number".to_string());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Deco,
    Baseline,
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "deco" => Ok(Variant::Deco),
            "baseline" => Ok(Variant::Baseline),
            other => Err(format!("unknown variant `{other}` (expected deco|baseline)")),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Deco => "deco",
            Variant::Baseline => "baseline",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub dit: DiTConfig,
    pub decoder: DecoderConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Deco,
            dit: DiTConfig::default(),
            decoder: DecoderConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = self.dit.violations();
        out.extend(self.decoder.violations(&self.dit));
        out
    }
}

fn check_patch_shape(op: &'static str, shape: &[usize], p: usize) -> Result<()> {
    if shape.len() != 4 {
        return Err(Error::invalid(op, format!("expected [B, H, W, C], got {shape:?}")));
    }
    for &extent in &shape[1..3] {
        if p == 0 || extent % p != 0 {
            return Err(Error::Indivisible { op, extent, divisor: p });
        }
    }
    Ok(())
}

/// `[B, H, W, C]` → `[B, (H/p)(W/p), p·p·C]`, patches in row-major order.
pub fn patchify<T: Scalar>(x: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    check_patch_shape("patchify", x.shape(), p)?;
    let (b, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    x.clone()
        .reshape([b, h / p, p, w / p, p, c])?
        .permute(&[0, 1, 3, 2, 4, 5])?
        .reshape([b, (h / p) * (w / p), p * p * c])
}

/// Exact inverse of [`patchify`].
pub fn unpatchify<T: Scalar>(tokens: &Tensor<T>, p: usize, height: usize, width: usize) -> Result<Tensor<T>> {
    let s = tokens.shape();
    if s.len() != 3 || p == 0 || !height.is_multiple_of(p) || !width.is_multiple_of(p) || s[1] != (height / p) * (width / p) || !s[2].is_multiple_of(p * p) {
        return Err(Error::shape("unpatchify", s, &[height, width, p]));
    }
    let (b, c) = (s[0], s[2] / (p * p));
    tokens
        .clone()
        .reshape([b, height / p, width / p, p, p, c])?
        .permute(&[0, 1, 3, 2, 4, 5])?
        .reshape([b, height, width, c])
}

fn patchify_var<T: Scalar>(tape: &mut Tape<T>, x: Var, p: usize) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    check_patch_shape("patchify", &shape, p)?;
    let (b, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
    let v = tape.reshape(x, &[b, h / p, p, w / p, p, c])?;
    let v = tape.permute(v, &[0, 1, 3, 2, 4, 5])?;
    tape.reshape(v, &[b, (h / p) * (w / p), p * p * c])
}

fn unpatchify_var<T: Scalar>(tape: &mut Tape<T>, tokens: Var, p: usize, height: usize, width: usize) -> Result<Var> {
    let s = tape.shape(tokens).to_vec();
    let (b, c) = (s[0], s[2] / (p * p));
    let v = tape.reshape(tokens, &[b, height / p, width / p, p, p, c])?;
    let v = tape.permute(v, &[0, 1, 3, 2, 4, 5])?;
    tape.reshape(v, &[b, height, width, c])
}

/// Baseline output head: AdaLN-modulated linear map to `p²·C` per token.
#[derive(Debug, Clone)]
pub struct FinalLayer {
    pub adaln: Linear,
    pub linear: Linear,
}

#[derive(Debug, Clone)]
pub enum Generator<T> {
    Deco { dit: DiT<T>, decoder: PixelDecoder<T> },
    Baseline { dit: DiT<T>, head: FinalLayer },
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// Predicted velocity, `[B, H, W, C]`.
    pub velocity: Var,
    /// DiT output token grid, `[B, H/p, W/p, D]`: the semantic field `c`
    /// for the decoupled model, the pre-head token grid for the baseline.
    pub features: Var,
}

/// Values of a gradient-free forward pass.
#[derive(Debug, Clone)]
pub struct Prediction<T> {
    pub velocity: Tensor<T>,
    pub features: Tensor<T>,
}

impl<T: Scalar> Generator<T> {
    /// Builds the model and its freshly initialized parameters.
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<(Self, ParamStore<T>)> {
        let problems = config.violations();
        if !problems.is_empty() {
            return Err(Error::invalid("model config", problems.join("; ")));
        }
        let mut store = ParamStore::new();
        let model = match config.variant {
            Variant::Deco => {
                let dit = DiT::new(&config.dit, config.dit.depth, "dit", &mut store, rng);
                let decoder = PixelDecoder::new(&config.decoder, &config.dit, "decoder", &mut store, rng);
                Generator::Deco { dit, decoder }
            }
            Variant::Baseline => {
                let dit = DiT::new(&config.dit, config.dit.depth + 2, "dit", &mut store, rng);
                let d = config.dit.hidden_dim;
                let p = config.dit.patch_size;
                let head = FinalLayer {
                    adaln: Linear::new(&mut store, "head.adaln", d, 2 * d, true, rng),
                    linear: Linear::new(&mut store, "head.linear", d, p * p * config.dit.channels, true, rng),
                };
                Generator::Baseline { dit, head }
            }
        };
        Ok((model, store))
    }

    pub fn variant(&self) -> Variant {
        match self {
            Generator::Deco { .. } => Variant::Deco,
            Generator::Baseline { .. } => Variant::Baseline,
        }
    }

    pub fn dit(&self) -> &DiT<T> {
        match self {
            Generator::Deco { dit, .. } | Generator::Baseline { dit, .. } => dit,
        }
    }

    pub fn decoder(&self) -> Option<&PixelDecoder<T>> {
        match self {
            Generator::Deco { decoder, .. } => Some(decoder),
            Generator::Baseline { .. } => None,
        }
    }

    /// The DiT half on its own: patchify, trunk, parameter-free RMS
    /// normalization, reshape to the `[B, H/p, W/p, D]` token grid.
    pub fn semantic_field(&self, tape: &mut Tape<T>, params: &Bound, x_t: Var, t: &[f64], labels: &[usize]) -> Result<(Var, TrunkOutput)> {
        let dit = self.dit();
        let cfg = &dit.config;
        let tokens = patchify_var(tape, x_t, cfg.patch_size)?;
        let trunk = dit.forward(tape, params, tokens, t, labels)?;
        let b = tape.shape(x_t)[0];
        let (gh, gw) = cfg.grid();
        let c = tape.rms_norm(trunk.tokens, dit::NORM_EPS)?;
        let c = tape.reshape(c, &[b, gh, gw, cfg.hidden_dim])?;
        Ok((c, trunk))
    }

    pub fn forward(&self, tape: &mut Tape<T>, params: &Bound, x_t: Var, t: &[f64], labels: &[usize]) -> Result<ForwardOutput> {
        let (features, trunk) = self.semantic_field(tape, params, x_t, t, labels)?;
        let velocity = match self {
            Generator::Deco { decoder, .. } => decoder.predict_velocity(tape, params, x_t, t, features)?,
            Generator::Baseline { dit, head } => {
                let cfg = &dit.config;
                let cond = tape.silu(trunk.cond);
                let mods = head.adaln.forward(tape, params, cond)?;
                let b = tape.shape(x_t)[0];
                let mods = tape.reshape(mods, &[b, 1, 2 * cfg.hidden_dim])?;
                let m = chunk(tape, mods, 2)?;
                let h = tape.rms_norm(trunk.tokens, dit::NORM_EPS)?;
                let h = modulate(tape, h, m[0], m[1])?;
                let out = head.linear.forward(tape, params, h)?;
                unpatchify_var(tape, out, cfg.patch_size, cfg.image_height, cfg.image_width)?
            }
        };
        Ok(ForwardOutput { velocity, features })
    }

    /// Forward pass without gradient tracking.
    pub fn predict(&self, params: &ParamStore<T>, x_t: &Tensor<T>, t: &[f64], labels: &[usize]) -> Result<Prediction<T>> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let x = tape.constant(x_t.clone());
        let out = self.forward(&mut tape, &bound, x, t, labels)?;
        Ok(Prediction {
            velocity: tape.value(out.velocity).clone(),
            features: tape.value(out.features).clone(),
        })
    }
}

//! Attention-free pixel decoder.
//!
//! Every operation after the condition upsampling is per position: dense
//! queries are built from each decoder cell's pixels plus a fixed position
//! code, then `N` blocks apply
//!
//! ```text
//! α, β, γ = Linear₀(SiLU(c_up + t))
//! h ← h + α ⊙ MLP(γ ⊙ h + β)
//! ```
//!
//! where `Linear₀` starts at zero and has no bias, so every block is the
//! identity at initialization and whenever its condition is zero.

use rand::Rng;

use super::layers::{chunk, sincos_2d, timestep_features, Linear};
use super::{DecoderConfig, DiTConfig};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct DecoderBlock {
    pub modulation: Linear,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct PixelDecoder<T> {
    pub config: DecoderConfig,
    dit: DiTConfig,
    pub input_proj: Linear,
    pub upsample: Linear,
    pub time_proj: Linear,
    pub blocks: Vec<DecoderBlock>,
    pub output: Linear,
    pos: Tensor<T>,
}

impl<T: Scalar> PixelDecoder<T> {
    pub fn new<R: Rng + ?Sized>(
        config: &DecoderConfig,
        dit: &DiTConfig,
        prefix: &str,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Self {
        let d = config.hidden_dim;
        let s = config.patch_size;
        let c = dit.channels;
        let ratio = dit.patch_size / s;
        let input_proj = Linear::new(store, &format!("{prefix}.input_proj"), s * s * c + config.pos_dim, d, false, rng);
        let upsample = Linear::new(store, &format!("{prefix}.upsample"), dit.hidden_dim, ratio * ratio * d, false, rng);
        let time_proj = Linear::new(store, &format!("{prefix}.time_proj"), config.time_freq_dim, d, false, rng);
        let blocks = (0..config.depth)
            .map(|i| {
                let n = format!("{prefix}.blocks.{i}");
                DecoderBlock {
                    modulation: Linear::zero_no_bias(store, &format!("{n}.modulation"), d, 3 * d),
                    fc1: Linear::new(store, &format!("{n}.mlp.fc1"), d, 4 * d, false, rng),
                    fc2: Linear::new(store, &format!("{n}.mlp.fc2"), 4 * d, d, false, rng),
                }
            })
            .collect();
        let output = Linear::new(store, &format!("{prefix}.output"), d, s * s * c, true, rng);
        let (qh, qw) = (dit.image_height / s, dit.image_width / s);
        PixelDecoder {
            config: config.clone(),
            dit: dit.clone(),
            input_proj,
            upsample,
            time_proj,
            blocks,
            output,
            pos: sincos_2d(qh, qw, config.pos_dim),
        }
    }

    /// Query grid `(H/s, W/s)`.
    pub fn query_grid(&self) -> (usize, usize) {
        (
            self.dit.image_height / self.config.patch_size,
            self.dit.image_width / self.config.patch_size,
        )
    }

    /// Fixed position code, `[H', W', pos_dim]`.
    pub fn position_code(&self) -> &Tensor<T> {
        &self.pos
    }

    /// `h₀ = W_in(concat(cells(x_t), pos))`, shape `[B, H', W', d]`.
    pub fn build_dense_queries(&self, tape: &mut Tape<T>, params: &Bound, x_t: Var) -> Result<Var> {
        let shape = tape.shape(x_t).to_vec();
        let s = self.config.patch_size;
        let c = self.dit.channels;
        if shape.len() != 4 || shape[3] != c || shape[1] != self.dit.image_height || shape[2] != self.dit.image_width {
            return Err(Error::shape(
                "build_dense_queries",
                &shape,
                &[0, self.dit.image_height, self.dit.image_width, c],
            ));
        }
        let b = shape[0];
        let (qh, qw) = self.query_grid();
        let cells = if s == 1 {
            x_t
        } else {
            let v = tape.reshape(x_t, &[b, qh, s, qw, s, c])?;
            let v = tape.permute(v, &[0, 1, 3, 2, 4, 5])?;
            tape.reshape(v, &[b, qh, qw, s * s * c])?
        };
        let pos_batch = Tensor::stack(&vec![self.pos.clone(); b])?;
        let pos = tape.constant(pos_batch);
        let joined = tape.concat(&[cells, pos], 3)?;
        self.input_proj.forward(tape, params, joined)
    }

    /// Projects the semantic field once and rearranges channels to space so
    /// each query position receives a `d`-vector; also returns the projected
    /// timestep embedding shaped `[B, 1, 1, d]`.
    pub fn upsample_condition(&self, tape: &mut Tape<T>, params: &Bound, cond: Var, t: &[f64]) -> Result<(Var, Var)> {
        let shape = tape.shape(cond).to_vec();
        let (gh, gw) = self.dit.grid();
        let d = self.config.hidden_dim;
        let r = self.dit.patch_size / self.config.patch_size;
        if shape.len() != 4 || shape[1] != gh || shape[2] != gw || shape[3] != self.dit.hidden_dim {
            return Err(Error::shape("upsample_condition", &shape, &[0, gh, gw, self.dit.hidden_dim]));
        }
        let b = shape[0];
        if t.len() != b {
            return Err(Error::invalid("upsample_condition", format!("batch {b} with {} times", t.len())));
        }
        let up = self.upsample.forward(tape, params, cond)?;
        let up = if r == 1 {
            up
        } else {
            let v = tape.reshape(up, &[b, gh, gw, r, r, d])?;
            let v = tape.permute(v, &[0, 1, 3, 2, 4, 5])?;
            tape.reshape(v, &[b, gh * r, gw * r, d])?
        };
        let freqs = tape.constant(timestep_features(t, self.config.time_freq_dim));
        let te = self.time_proj.forward(tape, params, freqs)?;
        let te = tape.reshape(te, &[b, 1, 1, d])?;
        Ok((up, te))
    }

    /// Returns `(α, β, γ)` for block `index`, each `[B, H', W', d]`.
    pub fn modulation(&self, index: usize, tape: &mut Tape<T>, params: &Bound, c_up: Var, t_emb: Var) -> Result<(Var, Var, Var)> {
        let block = &self.blocks[index];
        let cond = tape.add(c_up, t_emb)?;
        let cond = tape.silu(cond);
        let mods = block.modulation.forward(tape, params, cond)?;
        let m = chunk(tape, mods, 3)?;
        Ok((m[0], m[1], m[2]))
    }

    /// `h + α ⊙ MLP(γ ⊙ h + β)` with explicit modulation parameters.
    pub fn apply_block(&self, index: usize, tape: &mut Tape<T>, params: &Bound, h: Var, alpha: Var, beta: Var, gamma: Var) -> Result<Var> {
        let block = &self.blocks[index];
        let inner = tape.mul(gamma, h)?;
        let inner = tape.add(inner, beta)?;
        let z = block.fc1.forward(tape, params, inner)?;
        let z = tape.silu(z);
        let z = block.fc2.forward(tape, params, z)?;
        let z = tape.mul(alpha, z)?;
        tape.add(h, z)
    }

    pub fn decoder_block(&self, index: usize, tape: &mut Tape<T>, params: &Bound, h: Var, c_up: Var, t_emb: Var) -> Result<Var> {
        let (alpha, beta, gamma) = self.modulation(index, tape, params, c_up, t_emb)?;
        self.apply_block(index, tape, params, h, alpha, beta, gamma)
    }

    /// Full decoder: `x_t [B, H, W, C]`, semantic field `[B, H/p, W/p, D]`
    /// → velocity `[B, H, W, C]`.
    pub fn predict_velocity(&self, tape: &mut Tape<T>, params: &Bound, x_t: Var, t: &[f64], cond: Var) -> Result<Var> {
        let mut h = self.build_dense_queries(tape, params, x_t)?;
        let (c_up, t_emb) = self.upsample_condition(tape, params, cond, t)?;
        for i in 0..self.blocks.len() {
            h = self.decoder_block(i, tape, params, h, c_up, t_emb)?;
        }
        let out = self.output.forward(tape, params, h)?;
        let b = tape.shape(x_t)[0];
        let s = self.config.patch_size;
        let c = self.dit.channels;
        if s == 1 {
            return Ok(out);
        }
        let (qh, qw) = self.query_grid();
        let v = tape.reshape(out, &[b, qh, qw, s, s, c])?;
        let v = tape.permute(v, &[0, 1, 3, 2, 4, 5])?;
        tape.reshape(v, &[b, qh * s, qw * s, c])
    }
}

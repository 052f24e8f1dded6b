//! Diffusion transformer trunk over patch tokens.

use rand::Rng;

use super::layers::{chunk, modulate, rope_2d_tables, sincos_2d, timestep_features, Linear};
use super::DiTConfig;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(crate) const NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone)]
struct Block {
    adaln: Linear,
    qkv: Linear,
    proj: Linear,
    gate_up: Linear,
    value_up: Linear,
    down: Linear,
}

/// Timestep + class conditioned transformer with AdaLN-Zero blocks,
/// 2-D rotary attention and SwiGLU feed-forward layers.
#[derive(Debug, Clone)]
pub struct DiT<T> {
    pub config: DiTConfig,
    patch_embed: Linear,
    time_in: Linear,
    time_out: Linear,
    class_table: ParamId,
    blocks: Vec<Block>,
    pos: Tensor<T>,
    rope_cos: Tensor<T>,
    rope_sin: Tensor<T>,
}

/// Output of the trunk: the token states and the conditioning vector.
#[derive(Debug, Clone, Copy)]
pub struct TrunkOutput {
    /// `[B, T, D]` after the last block.
    pub tokens: Var,
    /// `[B, D]` timestep + class embedding.
    pub cond: Var,
}

impl<T: Scalar> DiT<T> {
    /// Builds `depth` blocks under the `prefix.` namespace.
    pub fn new<R: Rng + ?Sized>(
        config: &DiTConfig,
        depth: usize,
        prefix: &str,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Self {
        let d = config.hidden_dim;
        let p = config.patch_size;
        let ffn = config.ffn_dim();
        let patch_embed = Linear::new(store, &format!("{prefix}.patch_embed"), p * p * config.channels, d, false, rng);
        let time_in = Linear::new(store, &format!("{prefix}.time_embed.0"), config.time_freq_dim, d, false, rng);
        let time_out = Linear::new(store, &format!("{prefix}.time_embed.2"), d, d, false, rng);
        let class_table = store.create(
            format!("{prefix}.class_embed"),
            &[config.num_classes + 1, d],
            Init::Normal { std: 0.02 },
            rng,
        );
        let blocks = (0..depth)
            .map(|i| {
                let n = format!("{prefix}.blocks.{i}");
                Block {
                    adaln: Linear::new(store, &format!("{n}.adaln"), d, 6 * d, true, rng),
                    qkv: Linear::new(store, &format!("{n}.attn.qkv"), d, 3 * d, false, rng),
                    proj: Linear::new(store, &format!("{n}.attn.proj"), d, d, false, rng),
                    gate_up: Linear::new(store, &format!("{n}.ffn.w1"), d, ffn, false, rng),
                    value_up: Linear::new(store, &format!("{n}.ffn.w3"), d, ffn, false, rng),
                    down: Linear::new(store, &format!("{n}.ffn.w2"), ffn, d, false, rng),
                }
            })
            .collect();
        let (gh, gw) = config.grid();
        let pos = sincos_2d(gh, gw, d).reshape([gh * gw, d]).unwrap();
        let (rope_cos, rope_sin) = rope_2d_tables(gh, gw, d / config.heads);
        DiT {
            config: config.clone(),
            patch_embed,
            time_in,
            time_out,
            class_table,
            blocks,
            pos,
            rope_cos,
            rope_sin,
        }
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    /// Fixed additive position code, `[T, D]`.
    pub fn position_code(&self) -> &Tensor<T> {
        &self.pos
    }

    pub fn patch_embed(&self) -> &Linear {
        &self.patch_embed
    }

    pub(crate) fn check_labels(&self, labels: &[usize]) -> Result<()> {
        let max = self.config.num_classes;
        match labels.iter().find(|&&y| y > max) {
            Some(&label) => Err(Error::LabelOutOfRange { label, max }),
            None => Ok(()),
        }
    }

    /// Runs the trunk on patch tokens `[B, T, p²·C]`.
    pub fn forward(&self, tape: &mut Tape<T>, params: &Bound, tokens: Var, t: &[f64], labels: &[usize]) -> Result<TrunkOutput> {
        let shape = tape.shape(tokens).to_vec();
        let (gh, gw) = self.config.grid();
        let p = self.config.patch_size;
        if shape.len() != 3 || shape[1] != gh * gw || shape[2] != p * p * self.config.channels {
            return Err(Error::shape("dit_forward", &shape, &[shape.first().copied().unwrap_or(0), gh * gw, p * p * self.config.channels]));
        }
        let b = shape[0];
        if t.len() != b || labels.len() != b {
            return Err(Error::invalid(
                "dit_forward",
                format!("batch {b} with {} times and {} labels", t.len(), labels.len()),
            ));
        }
        if let Some(bad) = t.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid("dit_forward", format!("time {bad} outside [0, 1]")));
        }
        self.check_labels(labels)?;

        let x = self.patch_embed.forward(tape, params, tokens)?;
        let pos = tape.constant(self.pos.clone());
        let mut x = tape.add(x, pos)?;

        let freqs = tape.constant(timestep_features(t, self.config.time_freq_dim));
        let te = self.time_in.forward(tape, params, freqs)?;
        let te = tape.silu(te);
        let te = self.time_out.forward(tape, params, te)?;
        let ye = tape.gather(params[self.class_table], labels)?;
        let cond = tape.add(te, ye)?;
        let cond_act = tape.silu(cond);

        for block in &self.blocks {
            x = self.block_forward(block, tape, params, x, cond_act, b)?;
        }
        Ok(TrunkOutput { tokens: x, cond })
    }

    fn block_forward(&self, block: &Block, tape: &mut Tape<T>, params: &Bound, x: Var, cond_act: Var, b: usize) -> Result<Var> {
        let d = self.config.hidden_dim;
        let heads = self.config.heads;
        let dh = d / heads;
        let tokens = tape.shape(x)[1];

        let mods = block.adaln.forward(tape, params, cond_act)?;
        let mods = tape.reshape(mods, &[b, 1, 6 * d])?;
        let m = chunk(tape, mods, 6)?;
        let (shift_a, scale_a, gate_a, shift_f, scale_f, gate_f) = (m[0], m[1], m[2], m[3], m[4], m[5]);

        // attention
        let h = tape.rms_norm(x, NORM_EPS)?;
        let h = modulate(tape, h, shift_a, scale_a)?;
        let qkv = block.qkv.forward(tape, params, h)?;
        let qkv = tape.reshape(qkv, &[b, tokens, 3, heads, dh])?;
        let qkv = tape.permute(qkv, &[2, 0, 3, 1, 4])?;
        let mut parts = Vec::with_capacity(3);
        for i in 0..3 {
            let s = tape.slice(qkv, 0, i, 1)?;
            parts.push(tape.reshape(s, &[b, heads, tokens, dh])?);
        }
        let q = tape.rope(parts[0], &self.rope_cos, &self.rope_sin)?;
        let k = tape.rope(parts[1], &self.rope_cos, &self.rope_sin)?;
        let o = tape.attention(q, k, parts[2])?;
        let o = tape.permute(o, &[0, 2, 1, 3])?;
        let o = tape.reshape(o, &[b, tokens, d])?;
        let o = block.proj.forward(tape, params, o)?;
        let o = tape.mul(gate_a, o)?;
        let x = tape.add(x, o)?;

        // SwiGLU feed-forward
        let h = tape.rms_norm(x, NORM_EPS)?;
        let h = modulate(tape, h, shift_f, scale_f)?;
        let g = block.gate_up.forward(tape, params, h)?;
        let g = tape.silu(g);
        let v = block.value_up.forward(tape, params, h)?;
        let f = tape.mul(g, v)?;
        let f = block.down.forward(tape, params, f)?;
        let f = tape.mul(gate_f, f)?;
        tape.add(x, f)
    }
}

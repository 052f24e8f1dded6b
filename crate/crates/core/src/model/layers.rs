use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Affine map over the last axis: `x·W + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// `zero` selects the AdaLN-Zero convention (weight and bias start at 0);
    /// otherwise both use fan-in scaled uniform initialization.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        zero: bool,
        rng: &mut R,
    ) -> Self {
        let init = if zero {
            Init::Zeros
        } else {
            Init::FanInUniform { fan_in: in_dim }
        };
        let weight = store.create(format!("{name}.weight"), &[in_dim, out_dim], init, rng);
        let bias = Some(store.create(format!("{name}.bias"), &[out_dim], init, rng));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    /// Zero-initialized map without a bias term.
    pub fn zero_no_bias<T: Scalar>(store: &mut ParamStore<T>, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let weight = store.insert(format!("{name}.weight"), Tensor::zeros([in_dim, out_dim]));
        Linear {
            weight,
            bias: None,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, params[self.weight])?;
        match self.bias {
            Some(b) => tape.add(y, params[b]),
            None => Ok(y),
        }
    }

    pub fn num_params(&self) -> usize {
        self.in_dim * self.out_dim + if self.bias.is_some() { self.out_dim } else { 0 }
    }
}

/// DiT-style sinusoidal timestep features `[cos(t·f), sin(t·f)]`, with `t`
/// scaled by 1000 so the unit interval spans the usual frequency range.
pub fn timestep_features<T: Scalar>(t: &[f64], dim: usize) -> Tensor<T> {
    let half = dim / 2;
    Tensor::from_fn([t.len(), dim], |i| {
        let (row, col) = (i / dim, i % dim);
        if col >= 2 * half {
            return T::zero();
        }
        let k = col % half;
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        let arg = t[row] * 1000.0 * freq;
        T::lit(if col < half { arg.cos() } else { arg.sin() })
    })
}

/// 1-D sinusoidal code of `pos` with `dim` entries (half sin, half cos).
fn sincos_1d(pos: f64, dim: usize, out: &mut [f64]) {
    let half = dim / 2;
    for k in 0..half {
        let omega = 1.0 / 10_000f64.powf(k as f64 / half as f64);
        out[k] = (pos * omega).sin();
        out[half + k] = (pos * omega).cos();
    }
}

/// Fixed 2-D sinusoidal position code on a `rows×cols` grid: the first
/// `dim/2` entries encode the row, the rest the column. Shape `[rows, cols, dim]`.
pub fn sincos_2d<T: Scalar>(rows: usize, cols: usize, dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(rows * cols * dim);
    let mut buf = vec![0.0; dim];
    for r in 0..rows {
        for c in 0..cols {
            sincos_1d(r as f64, half, &mut buf[..half]);
            sincos_1d(c as f64, half, &mut buf[half..]);
            data.extend(buf.iter().map(|&v| T::lit(v)));
        }
    }
    Tensor::new([rows, cols, dim], data).expect("consistent sizes")
}

/// Cosine/sine tables for 2-D rotary encoding over a `rows×cols` token grid
/// (row-major tokens). The first half of each head's channel pairs rotate
/// with the row index, the second half with the column index.
pub fn rope_2d_tables<T: Scalar>(rows: usize, cols: usize, head_dim: usize) -> (Tensor<T>, Tensor<T>) {
    let pairs = head_dim / 2;
    let per_axis = (pairs / 2).max(1);
    let tokens = rows * cols;
    let mut cos = Vec::with_capacity(tokens * pairs);
    let mut sin = Vec::with_capacity(tokens * pairs);
    for tok in 0..tokens {
        let (r, c) = ((tok / cols) as f64, (tok % cols) as f64);
        for i in 0..pairs {
            let (pos, j) = if i < per_axis { (r, i) } else { (c, i - per_axis) };
            let theta = 10_000f64.powf(-(j as f64) / per_axis as f64);
            cos.push(T::lit((pos * theta).cos()));
            sin.push(T::lit((pos * theta).sin()));
        }
    }
    (
        Tensor::new([tokens, pairs], cos).unwrap(),
        Tensor::new([tokens, pairs], sin).unwrap(),
    )
}

/// `x·(1 + scale) + shift`
pub fn modulate<T: Scalar>(tape: &mut Tape<T>, x: Var, shift: Var, scale: Var) -> Result<Var> {
    let scaled = tape.mul(x, scale)?;
    let y = tape.add(x, scaled)?;
    tape.add(y, shift)
}

/// Splits the last axis of `x` into `parts` equal chunks.
pub fn chunk<T: Scalar>(tape: &mut Tape<T>, x: Var, parts: usize) -> Result<Vec<Var>> {
    let shape = tape.shape(x).to_vec();
    let axis = shape.len() - 1;
    let width = shape[axis] / parts;
    (0..parts).map(|i| tape.slice(x, axis, i * width, width)).collect()
}

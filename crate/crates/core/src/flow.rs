//! Linear-trajectory flow matching: time sampling, the plain and
//! frequency-weighted velocity losses, and the full training step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::freq::{self, FrequencyWeightSet, BLOCK};
use crate::model::{Generator, ModelConfig};
use crate::optim::{AdamWConfig, EmaShadow, OptimizerState};
use crate::params::{Bound, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One batch placed on random points of the noise–data line.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample<T> {
    pub x0: Tensor<T>,
    pub x1: Tensor<T>,
    pub t: Vec<f64>,
    pub x_t: Tensor<T>,
    pub v_t: Tensor<T>,
    pub y: Vec<usize>,
}

/// Logit-normal times: `sigmoid(z)` with `z ~ N(0, 1)`.
pub fn sample_time<R: Rng + ?Sized>(rng: &mut R, count: usize) -> Vec<f64> {
    (0..count)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            1.0 / (1.0 + (-z).exp())
        })
        .collect()
}

/// Draws unit Gaussian noise and per-sample times, then builds the interpolant.
pub fn make_trajectory<T: Scalar, R: Rng + ?Sized>(x0: &Tensor<T>, y: &[usize], rng: &mut R) -> Result<TrajectorySample<T>> {
    if !x0.is_finite() {
        return Err(Error::invalid("make_trajectory", "clean batch has non-finite values"));
    }
    let x1 = Tensor::randn(x0.shape().to_vec(), rng);
    let b = x0.shape().first().copied().unwrap_or(0);
    let t = sample_time(rng, b);
    trajectory_at(x0, &x1, &t, y)
}

/// `x_t = (1−t)·x0 + t·x1` and `v_t = x1 − x0` for given noise and times.
pub fn trajectory_at<T: Scalar>(x0: &Tensor<T>, x1: &Tensor<T>, t: &[f64], y: &[usize]) -> Result<TrajectorySample<T>> {
    if x0.shape() != x1.shape() {
        return Err(Error::shape("trajectory", x0.shape(), x1.shape()));
    }
    let b = x0.shape().first().copied().unwrap_or(0);
    if t.len() != b || y.len() != b {
        return Err(Error::invalid(
            "trajectory",
            format!("batch {b} with {} times and {} labels", t.len(), y.len()),
        ));
    }
    let per = if b == 0 { 0 } else { x0.len() / b };
    let mut x_t = x0.clone();
    for (i, (xt, (&a, &n))) in x_t.data_mut().iter_mut().zip(x0.data().iter().zip(x1.data())).enumerate() {
        let ti = T::lit(t[i / per]);
        *xt = (T::one() - ti) * a + ti * n;
    }
    Ok(TrajectorySample {
        x0: x0.clone(),
        x1: x1.clone(),
        t: t.to_vec(),
        x_t,
        v_t: x1.sub(x0)?,
        y: y.to_vec(),
    })
}

/// Mean squared error over every element.
pub fn fm_loss<T: Scalar>(v_pred: &Tensor<T>, v_t: &Tensor<T>) -> Result<f64> {
    if v_pred.shape() != v_t.shape() {
        return Err(Error::shape("fm_loss", v_pred.shape(), v_t.shape()));
    }
    let sum: f64 = v_pred
        .data()
        .iter()
        .zip(v_t.data())
        .map(|(&a, &b)| {
            let d = (a - b).to_f64().unwrap();
            d * d
        })
        .sum();
    Ok(sum / v_pred.len().max(1) as f64)
}

fn check_freq_shape(op: &'static str, shape: &[usize]) -> Result<()> {
    if shape.len() != 4 || shape[3] != 3 {
        return Err(Error::invalid(op, format!("expected RGB [B, H, W, 3], got {shape:?}")));
    }
    for &extent in &shape[1..3] {
        if extent % BLOCK != 0 {
            return Err(Error::Indivisible { op, extent, divisor: BLOCK });
        }
    }
    Ok(())
}

/// Frequency-weighted loss: both velocities go through YCbCr and an 8×8
/// block DCT, squared coefficient differences are scaled by the weight of
/// their channel and in-block frequency, and everything is averaged.
pub fn freqfm_loss<T: Scalar>(v_pred: &Tensor<T>, v_t: &Tensor<T>, weights: &FrequencyWeightSet) -> Result<f64> {
    if v_pred.shape() != v_t.shape() {
        return Err(Error::shape("freqfm_loss", v_pred.shape(), v_t.shape()));
    }
    check_freq_shape("freqfm_loss", v_pred.shape())?;
    let (h, w) = (v_pred.shape()[1], v_pred.shape()[2]);
    let diff = v_pred.sub(v_t)?;
    let coeffs = freq::block_dct_nhwc(&freq::rgb_to_ycbcr(&diff)?, BLOCK, false)?;
    let tiled: Tensor<f64> = weights.tile(h, w)?;
    let per = tiled.len();
    let sum: f64 = coeffs
        .data()
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let c = c.to_f64().unwrap();
            tiled.data()[i % per] * c * c
        })
        .sum();
    Ok(sum / coeffs.len().max(1) as f64)
}

/// Plain mean squared error after the color transform.
pub fn ycbcr_mse<T: Scalar>(v_pred: &Tensor<T>, v_t: &Tensor<T>) -> Result<f64> {
    fm_loss(&freq::rgb_to_ycbcr(v_pred)?, &freq::rgb_to_ycbcr(v_t)?)
}

/// [`fm_loss`] on the tape.
pub fn fm_loss_var<T: Scalar>(tape: &mut Tape<T>, v_pred: Var, v_t: Var) -> Result<Var> {
    let d = tape.sub(v_pred, v_t)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.mean(sq))
}

/// [`freqfm_loss`] on the tape; `weights` is the `[H, W, 3]` tiling from
/// [`FrequencyWeightSet::tile`].
pub fn freqfm_loss_var<T: Scalar>(tape: &mut Tape<T>, v_pred: Var, v_t: Var, weights: &Tensor<T>) -> Result<Var> {
    let shape = tape.shape(v_pred).to_vec();
    check_freq_shape("freqfm_loss", &shape)?;
    if weights.shape() != &shape[1..] {
        return Err(Error::shape("freqfm_loss", weights.shape(), &shape[1..]));
    }
    let d = tape.sub(v_pred, v_t)?;
    let m = tape.constant(freq::rgb_to_ycbcr_operand());
    let ycc = tape.matmul(d, m)?;
    let coeffs = tape.block_dct(ycc, BLOCK)?;
    let sq = tape.mul(coeffs, coeffs)?;
    let w = tape.constant(weights.clone());
    let weighted = tape.mul(sq, w)?;
    Ok(tape.mean(weighted))
}

/// Extra representation-alignment term. It sees the DiT output grid so an
/// external encoder can be attached later.
pub trait RepaHook<T: Scalar> {
    /// Returns a scalar loss variable, or `None` for a zero contribution.
    fn loss(&mut self, tape: &mut Tape<T>, features: Var) -> Result<Option<Var>>;
}

/// The default hook: contributes nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoRepa;

impl<T: Scalar> RepaHook<T> for NoRepa {
    fn loss(&mut self, _tape: &mut Tape<T>, _features: Var) -> Result<Option<Var>> {
        Ok(None)
    }
}

/// Loss variables of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Objective {
    pub fm: Var,
    pub freqfm: Var,
    pub repa: Option<Var>,
    pub total: Var,
    pub velocity: Var,
    pub features: Var,
}

/// Builds `fm + freq_weight·freqfm + repa` for a prepared trajectory.
pub fn training_objective<T: Scalar>(
    tape: &mut Tape<T>,
    model: &Generator<T>,
    params: &Bound,
    sample: &TrajectorySample<T>,
    weights: &Tensor<T>,
    freq_weight: f64,
    repa: &mut dyn RepaHook<T>,
) -> Result<Objective> {
    let x_t = tape.constant(sample.x_t.clone());
    let out = model.forward(tape, params, x_t, &sample.t, &sample.y)?;
    let v_t = tape.constant(sample.v_t.clone());
    let fm = fm_loss_var(tape, out.velocity, v_t)?;
    let freqfm = freqfm_loss_var(tape, out.velocity, v_t, weights)?;
    let scaled = tape.scale(freqfm, freq_weight);
    let mut total = tape.add(fm, scaled)?;
    let repa = repa.loss(tape, out.features)?;
    if let Some(r) = repa {
        total = tape.add(total, r)?;
    }
    Ok(Objective {
        fm,
        freqfm,
        repa,
        total,
        velocity: out.velocity,
        features: out.features,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: u64,
    pub lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub seed: u64,
    pub class_dropout: f64,
    /// JPEG quality of the frequency weights, 50..=100.
    pub quality: i64,
    pub freq_weight: f64,
    pub ema_decay: f64,
    /// Global gradient-norm clip; off when absent.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
}

fn default_checkpoint_every() -> u64 {
    1000
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            steps: 5000,
            lr: 1e-4,
            weight_decay: 0.0,
            seed: 0,
            class_dropout: 0.1,
            quality: 85,
            freq_weight: 1.0,
            ema_decay: 0.9999,
            grad_clip: None,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.batch_size == 0 {
            out.push("training.batch_size must be positive".to_string());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            out.push(format!("training.lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0) {
            out.push("training.weight_decay must be non-negative".to_string());
        }
        if !(0.0..=1.0).contains(&self.class_dropout) {
            out.push(format!("training.class_dropout must lie in [0, 1], got {}", self.class_dropout));
        }
        if !(50..=100).contains(&self.quality) {
            out.push(format!("training.quality must lie in [50, 100], got {}", self.quality));
        }
        if !(self.freq_weight >= 0.0) {
            out.push("training.freq_weight must be non-negative".to_string());
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            out.push(format!("training.ema_decay must lie in [0, 1], got {}", self.ema_decay));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                out.push("training.grad_clip must be positive when set".to_string());
            }
        }
        if self.checkpoint_every == 0 {
            out.push("training.checkpoint_every must be positive".to_string());
        }
        out
    }
}

/// Per-step loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub fm: f64,
    pub freqfm: f64,
    pub repa: f64,
    pub total: f64,
}

/// Randomness for one step, derived from the run seed and the step index so
/// a resumed run draws exactly what an uninterrupted one would.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step.wrapping_add(1));
    rng
}

/// Replaces each label with the null class with probability `p`.
pub fn drop_labels<R: Rng + ?Sized>(labels: &[usize], p: f64, null_label: usize, rng: &mut R) -> Vec<usize> {
    labels
        .iter()
        .map(|&y| if rng.random::<f64>() < p { null_label } else { y })
        .collect()
}

fn clip_gradients<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) {
    let norm = grads
        .iter()
        .map(|g| g.sum_squares().to_f64().unwrap())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let f = T::lit(max_norm / norm);
        for g in grads {
            for v in g.data_mut() {
                *v *= f;
            }
        }
    }
}

/// Owns the model, its parameters, the optimizer moments and the EMA shadow.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub model_config: ModelConfig,
    pub config: TrainConfig,
    pub model: Generator<T>,
    pub params: ParamStore<T>,
    pub optimizer: OptimizerState<T>,
    pub ema: EmaShadow<T>,
    weights: Tensor<T>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model_config: &ModelConfig, config: &TrainConfig) -> Result<Self> {
        let mut problems = model_config.violations();
        problems.extend(config.violations());
        if model_config.dit.channels != 3 {
            problems.push("frequency loss needs 3 channels".to_string());
        }
        if !model_config.dit.image_height.is_multiple_of(BLOCK) || !model_config.dit.image_width.is_multiple_of(BLOCK) {
            problems.push(format!("image extents must be divisible by {BLOCK}"));
        }
        if !problems.is_empty() {
            return Err(Error::invalid("trainer", problems.join("; ")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (model, params) = Generator::new(model_config, &mut rng)?;
        let weights = FrequencyWeightSet::for_quality(config.quality)?.tile(model_config.dit.image_height, model_config.dit.image_width)?;
        Ok(Trainer {
            model_config: model_config.clone(),
            config: config.clone(),
            optimizer: OptimizerState::new(config.adamw(), &params),
            ema: EmaShadow::new(config.ema_decay, &params),
            model,
            params,
            weights,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.optimizer.step
    }

    pub fn null_label(&self) -> usize {
        self.model_config.dit.num_classes
    }

    /// The tiled frequency weights used by the loss, `[H, W, 3]`.
    pub fn weights(&self) -> &Tensor<T> {
        &self.weights
    }

    /// Applies class dropout and draws the trajectory this step would use.
    pub fn prepare(&self, x0: &Tensor<T>, y: &[usize]) -> Result<TrajectorySample<T>> {
        let mut rng = step_rng(self.config.seed, self.optimizer.step);
        let y = drop_labels(y, self.config.class_dropout, self.null_label(), &mut rng);
        make_trajectory(x0, &y, &mut rng)
    }

    pub fn step(&mut self, x0: &Tensor<T>, y: &[usize]) -> Result<LossReport> {
        self.step_with_hook(x0, y, &mut NoRepa)
    }

    /// One optimization step: loss, backward, AdamW, EMA.
    pub fn step_with_hook(&mut self, x0: &Tensor<T>, y: &[usize], repa: &mut dyn RepaHook<T>) -> Result<LossReport> {
        let sample = self.prepare(x0, y)?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, true);
        let obj = training_objective(&mut tape, &self.model, &bound, &sample, &self.weights, self.config.freq_weight, repa)?;
        let value = |v: Var| tape.value(v).item().to_f64().unwrap();
        let fm = value(obj.fm);
        let freqfm = value(obj.freqfm);
        let repa_v = obj.repa.map(value).unwrap_or(0.0);
        let total = value(obj.total);
        for (name, v) in [("fm", fm), ("freqfm", freqfm), ("repa", repa_v), ("total", total)] {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss(name));
            }
        }
        let mut grads = tape.gradient(obj.total, bound.vars())?;
        drop(tape);
        if let Some(max_norm) = self.config.grad_clip {
            clip_gradients(&mut grads, max_norm);
        }
        self.optimizer.step(&mut self.params, &grads)?;
        self.ema.update(&self.params)?;
        Ok(LossReport {
            step: self.optimizer.step,
            fm,
            freqfm,
            repa: repa_v,
            total,
        })
    }

    /// Parameters with the EMA shadow values.
    pub fn ema_params(&self) -> ParamStore<T> {
        self.ema.to_store(&self.params)
    }
}

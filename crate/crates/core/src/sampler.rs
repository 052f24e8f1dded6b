//! Noise-to-data ODE integration with interval-gated classifier-free guidance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Generator;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Euler,
    Heun,
}

impl std::str::FromStr for Solver {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "euler" => Ok(Solver::Euler),
            "heun" => Ok(Solver::Heun),
            other => Err(format!("unknown solver `{other}` (expected euler|heun)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub steps: usize,
    pub solver: Solver,
    pub cfg_scale: f64,
    pub guidance_interval: [f64; 2],
    pub seed: u64,
    /// Use a plain Euler update on the last Heun step.
    #[serde(default)]
    pub heun_final_euler: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            steps: 100,
            solver: Solver::Euler,
            cfg_scale: 1.0,
            guidance_interval: [0.1, 1.0],
            seed: 0,
            heun_final_euler: false,
        }
    }
}

impl SamplerConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.steps == 0 {
            out.push("sampling.steps must be at least 1".to_string());
        }
        if !(self.cfg_scale >= 1.0) {
            out.push(format!("sampling.cfg_scale must be ≥ 1, got {}", self.cfg_scale));
        }
        let [lo, hi] = self.guidance_interval;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            out.push(format!("sampling.guidance_interval must satisfy 0 ≤ lo < hi ≤ 1, got [{lo}, {hi}]"));
        }
        out
    }

    fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid("sampler config", v.join("; ")))
        }
    }
}

/// `v_u + s·(v_c − v_u)` when `t ∈ [lo, hi]`, otherwise `v_c`.
pub fn cfg_velocity<T: Scalar>(v_cond: &Tensor<T>, v_uncond: &Tensor<T>, s: f64, t: f64, interval: [f64; 2]) -> Result<Tensor<T>> {
    if v_cond.shape() != v_uncond.shape() {
        return Err(Error::shape("cfg_velocity", v_cond.shape(), v_uncond.shape()));
    }
    if t < interval[0] || t > interval[1] {
        return Ok(v_cond.clone());
    }
    let s = T::lit(s);
    v_cond.zip_map(v_uncond, "cfg_velocity", |c, u| u + s * (c - u))
}

/// Anything that predicts a velocity for a batch at a shared time.
pub trait VelocityModel<T> {
    fn velocity(&mut self, x: &Tensor<T>, t: f64, labels: &[usize]) -> Result<Tensor<T>>;

    /// Label used for the unconditional branch of guidance.
    fn null_label(&self) -> usize;
}

/// Wraps a closure as a [`VelocityModel`].
pub struct FnModel<F> {
    pub f: F,
    pub null_label: usize,
}

impl<T, F: FnMut(&Tensor<T>, f64, &[usize]) -> Result<Tensor<T>>> VelocityModel<T> for FnModel<F> {
    fn velocity(&mut self, x: &Tensor<T>, t: f64, labels: &[usize]) -> Result<Tensor<T>> {
        (self.f)(x, t, labels)
    }

    fn null_label(&self) -> usize {
        self.null_label
    }
}

/// A trained generator and its (typically EMA) parameters; optionally
/// records the DiT output grid and the predicted velocity of every
/// conditional evaluation.
pub struct GeneratorModel<'a, T> {
    pub model: &'a Generator<T>,
    pub params: &'a ParamStore<T>,
    pub null_label: usize,
    pub capture: bool,
    pub features: Vec<Tensor<T>>,
    pub velocities: Vec<Tensor<T>>,
}

impl<'a, T: Scalar> GeneratorModel<'a, T> {
    pub fn new(model: &'a Generator<T>, params: &'a ParamStore<T>) -> Self {
        GeneratorModel {
            model,
            params,
            null_label: model.dit().config.num_classes,
            capture: false,
            features: Vec::new(),
            velocities: Vec::new(),
        }
    }
}

impl<T: Scalar> VelocityModel<T> for GeneratorModel<'_, T> {
    fn velocity(&mut self, x: &Tensor<T>, t: f64, labels: &[usize]) -> Result<Tensor<T>> {
        let times = vec![t; labels.len()];
        let out = self.model.predict(self.params, x, &times, labels)?;
        if self.capture && labels.iter().all(|&y| y != self.null_label) {
            self.features.push(out.features);
            self.velocities.push(out.velocity.clone());
        }
        Ok(out.velocity)
    }

    fn null_label(&self) -> usize {
        self.null_label
    }
}

/// Final state (unclipped) and the number of model evaluations spent.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput<T> {
    pub images: Tensor<T>,
    pub nfe: usize,
}

struct Guided<'m, M> {
    model: &'m mut M,
    scale: f64,
    interval: [f64; 2],
    nfe: usize,
}

impl<M> Guided<'_, M> {
    /// Guided velocity at `t`, gated on `gate_t`. With `s > 1` both branches
    /// are always evaluated.
    fn eval<T: Scalar>(&mut self, x: &Tensor<T>, t: f64, gate_t: f64, labels: &[usize]) -> Result<Tensor<T>>
    where
        M: VelocityModel<T>,
    {
        let v_c = self.model.velocity(x, t, labels)?;
        self.nfe += 1;
        if self.scale == 1.0 {
            return Ok(v_c);
        }
        let null = vec![self.model.null_label(); labels.len()];
        let v_u = self.model.velocity(x, t, &null)?;
        self.nfe += 1;
        cfg_velocity(&v_c, &v_u, self.scale, gate_t, self.interval)
    }
}

fn step_times(steps: usize) -> impl Iterator<Item = (f64, f64)> {
    (1..=steps).rev().map(move |k| (k as f64 / steps as f64, (k - 1) as f64 / steps as f64))
}

/// Euler integration of `dx/dt = v` from `t = 1` (the given noise) to 0.
pub fn euler_sample<T: Scalar, M: VelocityModel<T>>(model: &mut M, x1: &Tensor<T>, labels: &[usize], config: &SamplerConfig) -> Result<SampleOutput<T>> {
    config.validate()?;
    let mut g = Guided {
        model,
        scale: config.cfg_scale,
        interval: config.guidance_interval,
        nfe: 0,
    };
    let mut x = x1.clone();
    for (t, t_next) in step_times(config.steps) {
        let v = g.eval(&x, t, t, labels)?;
        x.axpy(T::lit(t_next - t), &v)?;
    }
    Ok(SampleOutput { images: x, nfe: g.nfe })
}

/// Heun predictor–corrector; guidance on both evaluations is gated on the
/// step's starting time.
pub fn heun_sample<T: Scalar, M: VelocityModel<T>>(model: &mut M, x1: &Tensor<T>, labels: &[usize], config: &SamplerConfig) -> Result<SampleOutput<T>> {
    config.validate()?;
    let mut g = Guided {
        model,
        scale: config.cfg_scale,
        interval: config.guidance_interval,
        nfe: 0,
    };
    let mut x = x1.clone();
    for (t, t_next) in step_times(config.steps) {
        let dt = T::lit(t_next - t);
        let v1 = g.eval(&x, t, t, labels)?;
        let mut pred = x.clone();
        pred.axpy(dt, &v1)?;
        if config.heun_final_euler && t_next == 0.0 {
            x = pred;
            continue;
        }
        let v2 = g.eval(&pred, t_next, t, labels)?;
        let half = T::lit(0.5);
        let avg = v1.zip_map(&v2, "heun", |a, b| half * (a + b))?;
        x.axpy(dt, &avg)?;
    }
    Ok(SampleOutput { images: x, nfe: g.nfe })
}

/// Draws the starting noise from `config.seed` and runs the configured solver.
pub fn sample<T: Scalar, M: VelocityModel<T>>(model: &mut M, labels: &[usize], image_shape: [usize; 3], config: &SamplerConfig) -> Result<SampleOutput<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let [h, w, c] = image_shape;
    let x1 = Tensor::randn([labels.len(), h, w, c], &mut rng);
    match config.solver {
        Solver::Euler => euler_sample(model, &x1, labels, config),
        Solver::Heun => heun_sample(model, &x1, labels, config),
    }
}

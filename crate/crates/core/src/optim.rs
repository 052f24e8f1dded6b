//! AdamW with decoupled weight decay, and an exponential moving average of
//! the weights.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First/second moment accumulators, one per parameter, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(config: AdamWConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.values().iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect::<Vec<_>>();
        OptimizerState {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One AdamW update of every parameter. Nothing is modified when any
    /// gradient is non-finite or misshapen.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<()> {
        adamw_step(params, grads, self)
    }
}

pub fn adamw_step<T: Scalar>(params: &mut ParamStore<T>, grads: &[Tensor<T>], state: &mut OptimizerState<T>) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::invalid(
            "adamw",
            format!("{} parameters, {} gradients, {} moment slots", params.len(), grads.len(), state.m.len()),
        ));
    }
    if !(state.config.lr > 0.0) {
        return Err(Error::invalid("adamw", format!("learning rate must be positive, got {}", state.config.lr)));
    }
    for (id, g) in params.ids().zip(grads) {
        if g.shape() != params.get(id).shape() {
            return Err(Error::shape("adamw", params.get(id).shape(), g.shape()));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(params.name(id).to_string()));
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as f64;
    let b1 = T::lit(c.beta1);
    let b2 = T::lit(c.beta2);
    let one = T::one();
    let bias1 = T::lit(1.0 - c.beta1.powf(t));
    let bias2 = T::lit(1.0 - c.beta2.powf(t));
    let lr = T::lit(c.lr);
    let eps = T::lit(c.eps);
    let decay = T::lit(1.0 - c.lr * c.weight_decay);
    for ((p, g), (m, v)) in params
        .values_mut()
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let m_hat = *mi / bias1;
            let v_hat = *vi / bias2;
            *pi = *pi * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Shadow copy of the parameters, updated as `s ← decay·s + (1−decay)·p`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaShadow<T> {
    pub decay: f64,
    pub shadow: Vec<Tensor<T>>,
}

impl<T: Scalar> EmaShadow<T> {
    pub fn new(decay: f64, params: &ParamStore<T>) -> Self {
        EmaShadow {
            decay,
            shadow: params.values().to_vec(),
        }
    }

    pub fn update(&mut self, params: &ParamStore<T>) -> Result<()> {
        ema_update(self, params)
    }

    /// A parameter store holding the shadow values under the same names.
    pub fn to_store(&self, template: &ParamStore<T>) -> ParamStore<T> {
        let mut out = template.clone();
        for (dst, src) in out.values_mut().iter_mut().zip(&self.shadow) {
            *dst = src.clone();
        }
        out
    }
}

pub fn ema_update<T: Scalar>(ema: &mut EmaShadow<T>, params: &ParamStore<T>) -> Result<()> {
    if ema.shadow.len() != params.len() {
        return Err(Error::invalid(
            "ema",
            format!("{} shadow arrays for {} parameters", ema.shadow.len(), params.len()),
        ));
    }
    let d = T::lit(ema.decay);
    let keep = T::lit(1.0 - ema.decay);
    for (s, p) in ema.shadow.iter_mut().zip(params.values()) {
        if s.shape() != p.shape() {
            return Err(Error::shape("ema", s.shape(), p.shape()));
        }
        for (si, &pi) in s.data_mut().iter_mut().zip(p.data()) {
            *si = d * *si + keep * pi;
        }
    }
    Ok(())
}

//! Frequency-decoupled pixel diffusion on the CPU.
//!
//! A diffusion transformer models low-frequency semantics on patch tokens
//! while a light, attention-free pixel decoder predicts the full-resolution
//! flow-matching velocity under that semantic conditioning. Training adds a
//! frequency-aware loss that weights block-DCT coefficients of the YCbCr
//! velocity by normalized reciprocal JPEG quantization tables.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below pin the common choices.

pub mod autodiff;
pub mod error;
pub mod flow;
pub mod freq;
pub mod model;
pub mod optim;
pub mod params;
pub mod sampler;
pub mod scalar;
pub mod spectral;
pub mod tensor;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type ParamStore32 = params::ParamStore<f32>;
pub type ParamStore64 = params::ParamStore<f64>;
pub type Trainer32 = flow::Trainer<f32>;
pub type Trainer64 = flow::Trainer<f64>;

//! Adaptive target normalization for stochastic-gradient learning.
//!
//! The normalizer learns a shift `μ` and scale `Σ` for the targets online,
//! and the output layer is rescaled whenever they change so that the
//! unnormalized function `Σ(W h(x) + b) + μ` is preserved exactly.

pub mod error;
pub mod harness;
pub mod network;
pub mod popart;
pub mod rl_demo;
pub mod scalar;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type MlpF32 = network::Mlp<f32>;
pub type MlpF64 = network::Mlp<f64>;
pub type OutputLayerF32 = popart::OutputLayer<f32>;
pub type OutputLayerF64 = popart::OutputLayer<f64>;
pub type NormalizerF32 = stats::NormalizerState<f32>;
pub type NormalizerF64 = stats::NormalizerState<f64>;
pub type LearnerF32 = popart::Learner<f32>;
pub type LearnerF64 = popart::Learner<f64>;

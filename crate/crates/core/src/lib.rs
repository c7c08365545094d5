//! Photosensitivity risk scoring without the standard library.
//!
//! This crate holds every numerical piece of the pipeline: a seeded synthetic
//! data generator, a small double-precision CNN toolkit with hand-written
//! backward passes, the dual-branch risk network and its training loop,
//! GradCAM and exact two-feature Shapley attribution, and the rule-based
//! filter recommender. It needs only `alloc`; file formats and the command
//! line live in the `photorisk` crate.

#![no_std]

extern crate alloc;

pub mod error;
pub mod explain;
pub mod gradcheck;
pub mod layers;
mod linalg;
pub mod model;
pub mod optim;
pub mod recommend;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

pub use model::{ModelConfig, ModelWeights, RiskScore};
pub use rng::SplitMix64;
pub use synth::{AugmentConfig, Dataset, EnvImage, EyeVariance, LuxValue, Sample};
pub use tensor::Tensor;

/// Forward-pass behaviour of batchnorm and dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

//! Unsupervised adversarial invariance induction.
//!
//! A five-network architecture (encoder with split output, predictor,
//! noisy transformer, decoder, and two adversarial disentanglers) trained
//! with an alternating frozen-player schedule so that the prediction
//! embedding `e1` sheds nuisance factors while `e2` absorbs them. The
//! crate bundles the minimal tensor/autodiff core this needs, the dataset
//! pipelines (IDX I/O, rotation and morphology variants, a synthetic
//! two-factor generator), probe-based invariance metrics, and a CLI for
//! reproducible runs.

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod parallel;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;

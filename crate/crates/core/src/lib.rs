//! Adversarial sequential anomaly detection for marked temporal point
//! processes.
//!
//! A Hawkes detector whose triggering kernel is a deep Fourier kernel is
//! trained against a stochastic recurrent generator of counterfeit normal
//! sequences. At inference the detector's prefix log-likelihood is compared
//! online with a per-step threshold estimated from generated sequences.

pub mod checkpoint;
pub mod codec;
pub mod detection;
pub mod error;
pub mod evaluation;
pub mod events;
pub mod fourier;
pub mod generator;
pub mod gradients;
pub mod hawkes;
pub mod nn;
pub mod seeding;
pub mod simulate;
pub mod training;

pub use error::{Error, Result};

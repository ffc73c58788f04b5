//! Sample-level bias prediction for long-tailed relationship classification.
//!
//! A frozen, head-biased classifier produces logits `z`; a generator network
//! predicts a per-sample bias `b` so that `z + b` recovers tail classes. The
//! generator is trained adversarially against a critic that sees per-sample
//! correction biases built from the ground truth.
//!
//! Module map:
//! - [`tensor`], [`layers`], [`nn`], [`loss`], [`optim`], [`gradcheck`], [`gradsuite`], [`rng`]:
//!   the small differentiable kernel everything runs on.
//! - [`data`]: seeded synthetic long-tailed datasets.
//! - [`classic`], [`phi`]: the base classifier and the frozen feature mapping.
//! - [`bias`]: global prior bias and correction-bias construction.
//! - [`bgan`]: generator, critic and the adversarial training loop.
//! - [`correct`], [`metrics`]: logit correctors and ranking metrics.

pub mod bgan;
pub mod bias;
pub mod classic;
pub mod correct;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod gradsuite;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod phi;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};

//! No-reference quality assessment for screen content images.
//!
//! Pristine screen content obeys learnable statistics in a deep feature
//! space. This crate trains a small convolutional model whose
//! distortion-aware features are regularized towards a standard normal
//! distribution; quality of an unseen image is then regressed from the
//! per-dimension KL deviation of its feature statistics, gated by a
//! semantic attention signal.
//!
//! The crate is organized around the training pipeline:
//!
//! * [`data`] — manifests, synthetic screen-content corpus, distortions,
//!   patch extraction and triplet batch sampling.
//! * [`model`] — the multi-scale feature generator, disentanglement heads,
//!   attention generator, quality regressor and distortion classifier.
//! * [`stats`] — feature moments, distribution normalization, closed-form
//!   KL deviation and the Gaussian-kernel MMD estimator.
//! * [`losses`] — triplet, classification, MAE and KL regularizer terms,
//!   combined into a [`losses::LossBundle`].
//! * [`train`] — the optimization loop, checkpointing and a
//!   finite-difference gradient check.
//! * [`eval`] — SRCC/PLCC/RMSE metrics and evaluation reports.
//!
//! All computation is deterministic given seeds, independent of whether
//! the `parallel` feature (rayon data parallelism) is enabled.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod parallel;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

//! Self-perturbation synthesis and attack-agnostic adversarial face detection.
//!
//! The crate trains a binary real-vs-adversarial detector using only real
//! images and synthetic "self-perturbations" of them:
//!
//! - [`perturb`] builds noise that imitates gradient-based attacks (point,
//!   block and mixed sign noise) and GAN-based attacks (gradient colour patches
//!   placed on high-frequency facial regions).
//! - [`detector`] is a small convolutional network with a max-pooling
//!   classification head, trained from scratch with exact gradients.
//! - [`ood`] fits a Gaussian to real-image features, samples low-likelihood
//!   virtual outliers and provides the energy-based uncertainty loss that
//!   regularizes training.
//! - [`eval`] provides AUC, accuracy, noise clustering and the cross-generator
//!   and cross-magnitude experiment matrices.
//! - [`fixtures`] generates deterministic synthetic faces with known landmarks.
//! - [`pipeline`] wires everything into reproducible runs and backs the CLI.

pub mod error;
pub mod imaging;

pub use error::{Error, Result};
pub mod fixtures;
pub mod detector;
pub mod eval;
pub mod ood;
pub mod perturb;
pub mod pipeline;
pub mod seeding;

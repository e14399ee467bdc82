//! Training a collection of small classifiers whose input gradients are
//! pushed apart, so the collection covers predictive patterns a single
//! SGD-trained model would ignore in favor of the simplest one.
//!
//! The pieces:
//!
//! - [`matrix`], [`activations`], [`rng`]: dense f64 linear algebra and
//!   deterministic, stream-addressable randomness.
//! - [`mlp`]: the fixed two-hidden-layer classifier with forward/backward
//!   passes, input gradients, and closed-form second derivatives for
//!   gradient penalties.
//! - [`regularizers`]: the pairwise gradient-alignment penalty, its
//!   feature-product variant, and the baseline penalties.
//! - [`datasets`]: the collages benchmark (real IDX / CIFAR sources or
//!   synthetic graded-complexity blocks) and its container format.
//! - [`trainer`]: deterministic collection training on shared minibatches.
//! - [`evaluation`]: mean / ensemble / best reports, specialization cross
//!   tables, alignment diagnostics, and gradient heatmaps.
//! - [`gradcheck`]: the finite-difference suite validating every analytic
//!   gradient path.

pub mod activations;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod hash;
pub mod matrix;
pub mod mlp;
pub mod regularizers;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::{Matrix, Vector};

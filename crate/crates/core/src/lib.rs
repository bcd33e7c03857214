//! Gradient-weighted multi-layer feature-space scoring for pool-based active
//! learning and out-of-distribution detection.
//!
//! A trained [`tensor_nn::MlpModel`] exposes a set of hidden layers. Each
//! sample's captured activations are weighted by the gradient of
//! `D_KL(uniform ‖ softmax)` and squashed by a per-layer sigmoid
//! ([`feature_space`]). Distances in that space to a labeled
//! [`comparison_set::ComparisonSet`] give the inner/outer distance ratio `r`,
//! its OOD mapping, and an energy-fused variant ([`scoring`]). The
//! [`al_engine`] and [`ood_eval`] modules run the two application loops.

pub mod al_engine;
pub mod cli;
pub mod comparison_set;
pub mod config;
pub mod data;
pub mod error;
pub mod feature_space;
pub mod ood_eval;
pub mod rng;
pub mod scoring;
pub mod steepness_opt;
pub mod tensor_nn;

pub use error::{Error, Result};

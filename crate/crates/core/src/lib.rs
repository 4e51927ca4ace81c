//! Quantifies how Gaussian perturbations of a model's input or final-layer
//! weights propagate into feature-attribution explanations, comparing a
//! first-order analytical covariance estimate against an empirical Monte
//! Carlo one.

pub mod data;
pub mod datagen;
pub mod error;
pub mod explain;
pub mod linalg;
pub mod nn;
pub mod uncertainty;
mod parallel;

pub use error::{Error, Result};

//! Synthetic attribution benchmarks for image explanations.
//!
//! Scenes of non-overlapping geometric objects are rendered to grayscale
//! images and labelled by attribution functions whose weights give an exact
//! per-pixel ground truth. A deterministic exhaustive-occlusion LIME variant
//! explains any predictor over those images, and explanations are scored
//! against the ground truth with exact EMD and KL divergence.

pub mod attribution;
pub mod datagen;
pub mod explainer;
pub mod metrics;
pub mod harness;
pub mod predictor;
pub mod scene;

//! Unsupervised mask-level anomaly scoring from world-model outputs.
//!
//! The pipeline compares sensory frames with world-model reconstructions and
//! predictions ([`diffs`]), normalizes and fuses the resulting maps, refines
//! them with instance masks ([`scoring`]) and evaluates pixel-pooled AP, FPR95
//! and AUROC ([`metrics`]). [`synthgen`] writes a deterministic synthetic
//! benchmark in the on-disk layout read by [`manifest`], and [`pipeline`]
//! runs scoring, evaluation and weight sweeps over such datasets.

pub mod diffs;
pub mod error;
pub mod features;
pub mod images;
pub mod manifest;
pub mod metrics;
pub mod pipeline;
mod resample;
pub mod rng;
pub mod scoring;
pub mod synthgen;
pub mod tensor_file;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    AnomalyMap, BinaryLabelMap, DiffKind, FeatureLayer, FeatureStack, FusionWeights, ImageTensor,
    InstanceLabelMap, PixelLabel, PredictionHistory,
};

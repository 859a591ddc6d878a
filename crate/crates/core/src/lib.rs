//! Unsupervised speaker-embedding training from pseudo-labeled speech segments.
//!
//! The pipeline: synthesize (or load) speech, gate it into fixed-length
//! segments by short-time energy, turn 0.2 s frames into log-mel feature
//! maps, treat each segment as one pseudo cluster, sample must-link /
//! cannot-link frame pairs from those clusters, train a siamese embedder
//! whose clamped output distance serves as the pair label, and score the
//! resulting embedding space with k-means against both the pseudo labels
//! and the true speakers.

pub mod audio;
pub mod config;
pub mod constraints;
pub mod embedder;
pub mod eval;
pub mod features;
pub mod pipeline;
pub mod segmentation;

mod error;

pub use error::{Error, Result};

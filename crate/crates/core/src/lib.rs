//! Speaker-verification data augmentation toolkit: speed perturbation,
//! log-Mel features, a small convolutional speaker encoder, an ArcFace
//! classification head, similarity-filtered synthetic speech, and EER/minDCF
//! scoring.

pub mod audio;
pub mod augmentation;
pub mod embedder;
pub mod error;
pub mod features;
pub mod hash;
pub mod losses;
pub mod parallel;
pub mod pipeline;
pub mod scoring;
pub mod store;

pub use error::{Error, Result};

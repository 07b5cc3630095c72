//! Camera-metadata contrastive embeddings and patch-consistency forensics.
//!
//! Image patches and text-serialized EXIF records are embedded into a shared
//! unit-norm space by a pair of small encoders trained with a symmetric
//! contrastive objective. The patch embeddings are then used for zero-shot
//! splice detection and localization, radial-distortion probing and EXIF
//! attribute probing.

pub mod distortion;
pub mod encoders;
pub mod error;
pub mod exif;
pub mod metrics;
pub mod nn;
pub mod patch;
pub mod probe;
pub mod splice;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

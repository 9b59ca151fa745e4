//! Coarse-to-fine generative adversarial frontalization and de-occlusion of
//! face images, plus the recognition protocols used to score it.
//!
//! The pipeline: four occluded variants of a profile image pass through one
//! shared-weight encoder-decoder generator (emitting a scale pyramid each),
//! a multi-input boosting network fuses the four coarse estimates into a
//! refined frontal image, and an adversary plus identity-preserving and
//! pixel-level losses train the whole stack end-to-end. Everything runs at
//! f32 for training and f64 for gradient verification from the same code.

pub mod booster;
pub mod checkpoint;
pub mod discriminator;
pub mod error;
pub mod evalkit;
pub mod facedata;
pub mod fixture;
pub mod generator;
pub mod gradcheck;
pub mod identity;
pub mod losses;
pub mod nn;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

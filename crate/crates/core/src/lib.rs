//! Aligned sound, image and text representations.
//!
//! Three convolutional pathways map spectrograms, images and embedded
//! sentences into a common bottleneck that feeds a shared fully connected
//! trunk. Training combines a KL transfer loss against teacher class
//! probabilities with a cosine margin ranking loss between paired inputs.

pub mod data;
pub mod encoders;
pub mod evaluation;
mod error;
pub mod losses;
pub mod training;

pub use error::{CoreError, Result};

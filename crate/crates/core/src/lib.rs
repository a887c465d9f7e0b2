//! Source-free adaptation of a tiny ROI classifier on a synthetic detection
//! world, using high-confidence pseudo-labels for hard supervision and
//! low-confidence ones for soft-label and local contrastive training.

pub mod adapt;
pub mod cli;
pub mod config;
pub mod detector;
pub mod error;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod pseudo;
pub mod rng;
pub mod synthworld;

pub use error::{Error, Result};

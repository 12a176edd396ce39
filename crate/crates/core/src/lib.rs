//! Whole-slide-image tumor screening algorithms.
//!
//! Everything here is pure and allocation-only: tissue detection on a
//! pyramid level, patch enumeration and sampling, a color-statistics patch
//! classifier, heatmap post-processing into slide features, a random forest,
//! ROC/FROC evaluation, and a synthetic slide generator. Reading and writing
//! slides lives in the `wsi` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod classifier;
pub mod color;
pub mod error;
pub mod eval;
pub mod features;
pub mod forest;
pub mod geometry;
pub mod heatmap;
pub mod morphology;
pub mod otsu;
pub mod patch;
pub mod pyramid;
pub mod raster;
pub mod rng;
pub mod roi;
pub mod synth;

pub use error::{Error, Result};

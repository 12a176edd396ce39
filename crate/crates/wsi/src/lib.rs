//! Storage, file formats, scoring and pipeline orchestration for whole-slide
//! tumor screening, on top of the algorithms in `wsi-core`.

pub mod config;
pub mod dataset;
pub mod error;
pub mod formats;
pub mod models;
pub mod pipeline;
pub mod render;
pub mod scoring;
pub mod stages;
pub mod store;

pub use error::{Result, WsiError};
pub use wsi_core as core;

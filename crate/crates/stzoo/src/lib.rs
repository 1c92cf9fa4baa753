//! File formats, data loading, training, evaluation and profiling on top of
//! `stzoo-core`.

pub mod checkpoint;
pub mod config;
pub mod datapipe;
pub mod desk;
pub mod engine;
mod error;
pub mod profiler;
pub mod results;
pub mod weights;

pub use error::{Result, StzooError};
pub use stzoo_core as core;

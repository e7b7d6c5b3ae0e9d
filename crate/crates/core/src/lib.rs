//! Depth fusion with probabilistic signed distance fields.

pub mod camera;
pub mod config;
pub mod dataset;
pub mod error;
pub mod extraction;
pub mod fusion;
pub mod geometric;
mod mc_tables;
pub mod mesh;
pub mod metrics;
pub mod photometric;
pub mod pipeline;
pub mod spatial;
pub mod synth;

pub use error::{Error, Result};

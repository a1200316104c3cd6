//! Sensor-stream cleaning on top of the `streamrtr` engine: CSV ingest into
//! sensors x hours x days frames, controlled degradation, streaming recovery
//! and export.

pub mod cli;
pub mod config;
pub mod degrade;
pub mod export;
pub mod error;
pub mod frame;
pub mod ingest;
pub mod noaa;
pub mod pipeline;

pub use error::{CliError, Result};
pub use frame::TensorFrame;

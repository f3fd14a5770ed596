//! Library half of the `syncanim` binary: run configuration, corpus
//! preparation and the two-stage training loop, evaluation, experiment
//! presets, and run-log/report plumbing. The binary in `main.rs` is a thin
//! clap dispatcher over these modules, and the acceptance suite drives the
//! same code paths directly.

pub mod config;
pub mod experiment;
pub mod records;
pub mod report;
pub mod train;

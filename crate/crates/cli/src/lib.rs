//! Experiment runner around `spice-core`: configuration, the simulate /
//! SPICE / Lasso pipeline with its CSV and JSON outputs, and size sweeps.

pub mod bench;
pub mod config;
pub mod error;
pub mod experiment;

pub use config::{ExperimentConfig, NoiseVariance, Variant};
pub use error::CliError;

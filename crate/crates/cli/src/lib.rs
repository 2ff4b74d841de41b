//! Command implementations behind the `grace` binary: synthetic data,
//! per-sample alignment, reports, loss evaluation and metrics.

pub mod config;
pub mod error;
pub mod evaluate;
pub mod losses;
pub mod pipeline;
pub mod synth;

pub use config::PipelineConfig;
pub use error::CliError;

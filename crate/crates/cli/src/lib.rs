//! Orchestration behind the `obeskit` command: configuration loading, stage
//! execution and failure classification.

pub mod config;
pub mod error;
pub mod stages;

pub use config::{load, Loaded, Overrides, PipelineConfig};
pub use error::{Failure, Outcome};
pub use stages::{Context, Manifest, Summary};

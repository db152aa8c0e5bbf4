//! Command-line orchestration of the pattern pipeline: configuration,
//! versioned stage artifacts and report emission.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod schema;
pub mod synth;

pub use artifacts::{Stage, Store, SCHEMA_VERSION};
pub use config::PipelineConfig;
pub use error::{CliError, CliResult};
pub use pipeline::Pipeline;

//! Command-line pipeline: `synth`, `score`, `select`, `eval`, `lags`,
//! `report`.

pub mod commands;
pub mod config;
pub mod report;

pub use commands::{CliError, Context, TOOL_VERSION};
pub use config::{ConfigError, Paths, RunConfig};

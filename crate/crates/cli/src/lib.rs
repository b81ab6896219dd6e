//! Command-line orchestration for the extubation pipeline: configuration,
//! artifact persistence with hash-verified manifests, and report emission.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use config::{Family, Overrides, RunConfig};
pub use error::{exit, CliError, Result};
pub use manifest::RunManifest;

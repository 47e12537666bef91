//! Library surface of the stainlab binary: config schema and the pipeline
//! glue shared by the CLI commands and the acceptance suite.

pub mod config;
pub mod pipeline;

pub use config::RunConfig;

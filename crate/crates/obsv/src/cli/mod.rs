//! Configuration-driven front end: run configs, report bundles and the
//! drivers behind the `obsv select / estimate / bench` subcommands.

pub mod commands;
pub mod config;
pub mod report;

pub use commands::{cmd_bench, cmd_estimate, cmd_select, prepare_model, PreparedModel};
pub use config::{ModelConfig, Panel, RunConfig, Strategy};
pub use report::{
    bundle_fingerprint, format_set, metadata_without_timing, ReportBundle, RunMetadata,
    METADATA_FILE,
};

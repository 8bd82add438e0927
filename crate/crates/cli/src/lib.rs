//! Command-line front end for `stscale`: file formats, result statistics and
//! the `analyze`, `synth`, `compare`, `resample` and `calibrate` commands.
//!
//! Exit codes: 0 success, 2 unreadable or malformed files, 3 invalid
//! configuration, 4 shape mismatch, 5 numerical failure.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod fieldio;

pub use args::run;
pub use commands::{
    cmd_analyze, cmd_calibrate_anis, cmd_calibrate_corr3d, cmd_compare, cmd_resample, cmd_synth, AnalyzeReport,
    CompareReport, MaskedSummary, Resample, Summary,
};
pub use config::{RunConfig, SpacingArg};
pub use error::{CliError, CliResult};

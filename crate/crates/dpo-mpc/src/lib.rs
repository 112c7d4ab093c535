//! File formats and the command-line experiment harness for
//! [`dpo_mpc_core`].
//!
//! - [`config`]: TOML experiment configurations and the shipped robot-arm file;
//! - [`bundle_file`]: versioned JSON controller bundles;
//! - [`trace_file`]: CSV and JSON simulation traces and batch summaries;
//! - [`cli`]: the `dpo-mpc` subcommands and their exit codes.

pub mod bundle_file;
pub mod cli;
pub mod config;
pub mod real;
pub mod trace_file;

//! Configuration parsing and experiment orchestration behind the `nonlocal`
//! command.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod emit;
pub mod error;
pub mod run;
mod selftest;

pub use config::{load_config, parse_config, RunConfig};
pub use error::CliError;
pub use run::{exit_code, run, Command, RunReport};

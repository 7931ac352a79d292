//! Study driver: plan, run, analyze, phase and validate subcommands.

pub mod config;
pub mod io;
pub mod plan;
pub mod run;
pub mod analyze;
pub mod phase;
pub mod validate;

//! Library half of the `uible` command-line tool: configuration, CSV
//! input/output, the subcommands, and the synthetic demo study.

pub mod commands;
pub mod config;
pub mod csvio;
pub mod demo;
pub mod error;
pub mod train;

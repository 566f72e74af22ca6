//! Configuration, file formats and subcommands of the `mfgc` driver.

pub mod commands;
pub mod config;
pub mod output;

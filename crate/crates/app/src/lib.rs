//! Configuration, data, persistence and command drivers for the `deco` CLI.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod export;
pub mod run;

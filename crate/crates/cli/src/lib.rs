//! Configuration, orchestration and artifact output for the `penning` binary.

pub mod commands;
pub mod config;
pub mod output;
pub mod units;

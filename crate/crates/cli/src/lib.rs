//! Configuration and commands behind the `refuge` binary.

pub mod commands;
pub mod config;

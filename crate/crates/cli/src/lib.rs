//! Command-line front end: configuration, reports and subcommands.

pub mod commands;
pub mod config;
pub mod report;
pub mod selftest;

//! Command-line harness around the `mbcgcn` library.

pub mod commands;
pub mod config;
pub mod report;

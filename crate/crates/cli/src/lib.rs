//! Command-line front end for the `winratio` estimators: CSV ingestion,
//! TOML run configs and JSON reports.

pub mod commands;
pub mod config;
pub mod data;

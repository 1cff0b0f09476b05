//! Command-line front end for the lending marketplace simulator.

pub mod commands;
pub mod config;
pub mod error;
pub mod fixtures;
pub mod io;
pub mod manifest;
pub mod output;

//! Host-side pieces of the metareason controller: TOML configuration, an
//! OpenAI-compatible HTTP backend, run artifacts and the command line.

pub mod cli;
pub mod config;
pub mod files;
pub mod http;
pub mod tasks;

//! File formats, run manifests and the command-line driver around
//! `taxocomplete-core`.

pub mod artifact;
pub mod cli;
pub mod config;
pub mod formats;
pub mod manifest;
pub mod report;

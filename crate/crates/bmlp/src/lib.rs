//! IO, file formats, the training loop, benchmarks and the command layer
//! around `bmlp-core`.

#![forbid(unsafe_code)]

pub mod bench;
pub mod binio;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod exec;
pub mod ingest;
pub mod manifest;
pub mod report;
pub mod splits;
pub mod trainer;

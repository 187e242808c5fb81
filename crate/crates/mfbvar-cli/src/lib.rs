//! Library surface of the command-line tool: ingestion, configuration,
//! benchmarking and export. The binary in `main.rs` is a thin driver over
//! these modules.

pub mod bench;
pub mod config;
pub mod export;
pub mod ingest;

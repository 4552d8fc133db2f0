pub mod analyze;
pub mod config;
pub mod embedder;
pub mod ingest;
pub mod pipeline;
pub mod report;
pub mod store;
pub mod wet;

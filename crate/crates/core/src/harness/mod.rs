//! Experiment front-end: configuration, data ingestion, cross-validation,
//! metrics and output files.

pub mod commands;
pub mod config;
pub mod cv;
pub mod io;

pub use config::ExperimentConfig;
pub use cv::{mae, nlpd, run_cv, CvSummary};
pub use io::{ingest_csv, Checkpoint, CsvSchema};

//! Grid experiments: run every (task, tokenizer, scheme, depth, seed) cell,
//! persist one JSON record per cell, and lay records out as CSV tables.

mod config;
mod report;
mod runner;

use thiserror::Error;

pub use config::{
    default_perturbations, CellCoords, EvalSplit, GridConfig, TrainingOverrides, DEFAULT_BPE_MERGES,
};
pub use report::{load_records, report, write_reports, Layout, ReportFile};
pub use runner::{
    cell_key, run_grid, run_grid_observed, CellFailure, DatasetResult, ExperimentRecord,
    GridOutcome,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid grid config: {0}")]
    Config(String),
    #[error("data missing: {0}")]
    DataMissing(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record {path}: {reason}")]
    BadRecord { path: String, reason: String },
    #[error("no records to report")]
    NoRecords,
    #[error("unknown report layout {0:?} (expected by-scheme or robustness)")]
    UnknownLayout(String),
}

impl ExperimentError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

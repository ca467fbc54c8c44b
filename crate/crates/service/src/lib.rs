//! Extraction runs, review queues and clinician adjudication over HTTP.
//!
//! State lives in a data directory:
//!
//! ```text
//! <data_dir>/corpora/<ref>/{patients,notes,gold}.jsonl
//! <data_dir>/runs.log
//! <data_dir>/detections/<run_id>.jsonl
//! <data_dir>/adjudications.log
//! ```
//!
//! The logs are append-only; startup replays them to rebuild every index.

mod api;
mod applog;
mod config;
mod model;
mod projection;
mod service;
mod store;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use api::{router, serve, serve_blocking};
pub use applog::{write_atomic, AppendLog};
pub use config::{install_corpus, valid_corpus_ref, ServiceConfig, DEFAULT_LISTEN};
pub use model::{Adjudication, AdjudicationRequest, Progress, Run, RunEvent, RunState, Verdict};
pub use projection::{implied_label, merge_gold, project_gold, Conflict, Projection, ReviewerVerdict};
pub use service::{Highlight, MetricsSnapshot, ReviewFilter, ReviewItem, RunCounts, Service, ServiceError};
pub use store::{compact, CompactionReport, Store, ADJUDICATIONS_LOG, CORPORA_DIR, DETECTIONS_DIR, RUNS_LOG};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: corrupt record: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("unknown run `{0}`")]
    UnknownRun(String),
    #[error("run `{run_id}` cannot move from {from:?} to {to:?}")]
    Transition { run_id: String, from: RunState, to: RunState },
}

impl StoreError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        StoreError::Io { path: path.to_path_buf(), source }
    }
}

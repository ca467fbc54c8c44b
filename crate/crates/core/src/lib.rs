//! Depressive-symptom screening over free-text clinical notes.
//!
//! The crate is organized as a pipeline:
//!
//! - [`corpus`]: patient/note records, PHQ score mining, cohort statistics,
//!   a seeded synthetic corpus generator and case-control matching.
//! - [`taxonomy`]: the 16 symptom categories and their phrasings.
//! - [`extract`]: extraction backends (keyword baseline, chat and
//!   entailment wire clients, oracle mocks) and the extraction runner.
//! - [`eval`]: note-level positive-class precision/recall/F1 per category.
//! - [`screen`]: per-patient symptom vectors and the classifier bench.

pub mod corpus;
pub mod eval;
pub mod extract;
pub mod screen;
pub mod taxonomy;
pub mod text;

pub use corpus::{Corpus, GoldLabel, Note, Patient, Span};
pub use extract::{BackendConfig, BackendKind, Detection, DetectionStatus};
pub use taxonomy::{SymptomCategory, Taxonomy};

/// Default seed used wherever randomness is configurable.
pub const DEFAULT_SEED: u64 = 7;

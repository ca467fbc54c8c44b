//! Patients, notes and gold labels.
//!
//! A corpus lives on disk as a directory of line-delimited JSON files:
//! `patients.jsonl`, `notes.jsonl` and an optional `gold.jsonl`. Unknown
//! fields are ignored on read and never written back.

mod matching;
mod phq;
mod stats;
mod synth;

use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::taxonomy;

pub use matching::{
    match_controls, visit_window, MatchError, MatchOutcome, MatchedPair, BIRTH_GAP_DAYS, WINDOW_MONTHS,
};
pub use phq::{parse_phq, PhqInstance, PhqKind, PhqParseOptions, PHQ_MARKER};
pub use stats::{age_in_years, cohort_stats, CohortAverage, CohortOptions, CohortStatsRow, CohortTable, Denominator};
pub use synth::{
    synthesize, synthesize_with, CategoryTemplates, NoteCount, SynthError, SynthSpec, TemplateKind, Templates,
};

pub const PATIENTS_FILE: &str = "patients.jsonl";
pub const NOTES_FILE: &str = "notes.jsonl";
pub const GOLD_FILE: &str = "gold.jsonl";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{file}:{line}: malformed record: {message}")]
    Malformed { file: String, line: usize, message: String },
    #[error("duplicate {kind} id `{id}`")]
    Duplicate { kind: &'static str, id: String },
    #[error("notes reference unknown patients: {}", .note_ids.join(", "))]
    DanglingPatient { note_ids: Vec<String> },
    #[error("gold labels reference unknown notes: {}", .note_ids.join(", "))]
    DanglingNote { note_ids: Vec<String> },
    #[error("invalid record: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    F,
    M,
    #[serde(rename = "O")]
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patient {
    pub patient_id: String,
    pub birth_date: NaiveDate,
    pub gender: Gender,
    pub is_case: bool,
    pub diagnosis_date: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Note {
    pub note_id: String,
    pub patient_id: String,
    pub date: NaiveDate,
    pub department: String,
    pub text: String,
}

/// Half-open byte range into a note's text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    /// Slices `text`, or `None` when the span is out of bounds or splits a
    /// character.
    pub fn slice<'a>(&self, text: &'a str) -> Option<&'a str> {
        if self.start > self.end {
            return None;
        }
        text.get(self.start..self.end)
    }
}

/// Adjudicated note-level truth for one (note, category) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub note_id: String,
    pub category_id: String,
    pub present: bool,
    #[serde(default)]
    pub evidence: Vec<Span>,
}

/// An immutable, referentially consistent set of patients, notes and gold
/// labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    patients: Vec<Patient>,
    notes: Vec<Note>,
    gold: Vec<GoldLabel>,
    patient_index: HashMap<String, usize>,
    note_index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(patients: Vec<Patient>, notes: Vec<Note>, gold: Vec<GoldLabel>) -> Result<Self, CorpusError> {
        let mut patient_index = HashMap::with_capacity(patients.len());
        for (i, p) in patients.iter().enumerate() {
            if p.patient_id.is_empty() {
                return Err(CorpusError::Invalid("empty patient_id".into()));
            }
            if patient_index.insert(p.patient_id.clone(), i).is_some() {
                return Err(CorpusError::Duplicate { kind: "patient", id: p.patient_id.clone() });
            }
            if p.is_case && p.diagnosis_date.is_none() {
                return Err(CorpusError::Invalid(format!("case patient `{}` has no diagnosis_date", p.patient_id)));
            }
        }

        let mut note_index = HashMap::with_capacity(notes.len());
        let mut dangling = Vec::new();
        for (i, n) in notes.iter().enumerate() {
            if note_index.insert(n.note_id.clone(), i).is_some() {
                return Err(CorpusError::Duplicate { kind: "note", id: n.note_id.clone() });
            }
            if !patient_index.contains_key(&n.patient_id) {
                dangling.push(n.note_id.clone());
            }
            if n.text.trim().is_empty() {
                return Err(CorpusError::Invalid(format!("note `{}` has empty text", n.note_id)));
            }
        }
        if !dangling.is_empty() {
            return Err(CorpusError::DanglingPatient { note_ids: dangling });
        }

        let tax = taxonomy();
        let mut seen = HashSet::with_capacity(gold.len());
        let mut dangling = Vec::new();
        for g in &gold {
            let Some(&ni) = note_index.get(&g.note_id) else {
                dangling.push(g.note_id.clone());
                continue;
            };
            if tax.get(&g.category_id).is_none() {
                return Err(CorpusError::Invalid(format!("unknown category `{}`", g.category_id)));
            }
            if !seen.insert((g.note_id.as_str(), g.category_id.as_str())) {
                return Err(CorpusError::Duplicate {
                    kind: "gold label",
                    id: format!("{}/{}", g.note_id, g.category_id),
                });
            }
            let text = &notes[ni].text;
            if let Some(bad) = g.evidence.iter().find(|s| s.slice(text).is_none()) {
                return Err(CorpusError::Invalid(format!(
                    "gold evidence {}..{} does not fit note `{}`",
                    bad.start, bad.end, g.note_id
                )));
            }
        }
        if !dangling.is_empty() {
            dangling.sort();
            dangling.dedup();
            return Err(CorpusError::DanglingNote { note_ids: dangling });
        }

        Ok(Self { patients, notes, gold, patient_index, note_index })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn patients(&self) -> &[Patient] {
        &self.patients
    }

    pub fn notes(&self) -> &[Note] {
        &self.notes
    }

    pub fn gold(&self) -> &[GoldLabel] {
        &self.gold
    }

    pub fn patient(&self, patient_id: &str) -> Option<&Patient> {
        self.patient_index.get(patient_id).map(|&i| &self.patients[i])
    }

    pub fn note(&self, note_id: &str) -> Option<&Note> {
        self.note_index.get(note_id).map(|&i| &self.notes[i])
    }

    /// Notes grouped by patient id, in corpus order.
    pub fn notes_by_patient(&self) -> HashMap<&str, Vec<&Note>> {
        let mut map: HashMap<&str, Vec<&Note>> = HashMap::new();
        for n in &self.notes {
            map.entry(n.patient_id.as_str()).or_default().push(n);
        }
        map
    }

    /// Keeps only the notes accepted by `keep`, together with their gold
    /// labels. Patients are retained.
    pub fn filter_notes(&self, mut keep: impl FnMut(&Note) -> bool) -> Corpus {
        let notes: Vec<Note> = self.notes.iter().filter(|n| keep(n)).cloned().collect();
        let kept: HashSet<&str> = notes.iter().map(|n| n.note_id.as_str()).collect();
        let gold = self.gold.iter().filter(|g| kept.contains(g.note_id.as_str())).cloned().collect();
        Corpus::new(self.patients.clone(), notes, gold).expect("subset of a valid corpus is valid")
    }

    /// Reads a corpus directory. `gold.jsonl` is optional.
    pub fn ingest(dir: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let dir = dir.as_ref();
        let patients = read_jsonl(&dir.join(PATIENTS_FILE))?;
        let notes = read_jsonl(&dir.join(NOTES_FILE))?;
        let gold_path = dir.join(GOLD_FILE);
        let gold = if gold_path.exists() { read_jsonl(&gold_path)? } else { Vec::new() };
        Self::new(patients, notes, gold)
    }

    /// Writes the corpus directory. The gold file is written only when the
    /// corpus carries gold labels.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<(), CorpusError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|source| CorpusError::Io { path: dir.to_path_buf(), source })?;
        write_jsonl(&dir.join(PATIENTS_FILE), &self.patients)?;
        write_jsonl(&dir.join(NOTES_FILE), &self.notes)?;
        if !self.gold.is_empty() {
            write_jsonl(&dir.join(GOLD_FILE), &self.gold)?;
        }
        Ok(())
    }
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })?;
    parse_jsonl(BufReader::new(file), &path.display().to_string())
}

pub fn parse_jsonl<T: DeserializeOwned>(reader: impl BufRead, file: &str) -> Result<Vec<T>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line =
            line.map_err(|e| CorpusError::Malformed { file: file.to_string(), line: i + 1, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            file: file.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io { path: path.to_path_buf(), source };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    write_jsonl_to(&mut w, items).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn write_jsonl_to<T: Serialize>(w: &mut impl Write, items: &[T]) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut *w, item)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_jsonl_string<T: Serialize>(items: &[T]) -> String {
    let mut buf = Vec::new();
    write_jsonl_to(&mut buf, items).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

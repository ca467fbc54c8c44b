//! File-backed service state: the run log, per-run detection files and the
//! adjudication log, with in-memory indexes rebuilt by replay.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use symscreen_core::corpus::{parse_jsonl, to_jsonl_string};
use symscreen_core::Detection;

use crate::applog::{write_atomic, AppendLog};
use crate::model::{Adjudication, AdjudicationRequest, Progress, Run, RunEvent, RunState};
use crate::StoreError;

pub const RUNS_LOG: &str = "runs.log";
pub const ADJUDICATIONS_LOG: &str = "adjudications.log";
pub const DETECTIONS_DIR: &str = "detections";
pub const CORPORA_DIR: &str = "corpora";

fn numeric_suffix(id: &str) -> u64 {
    id.trim_start_matches(|c: char| !c.is_ascii_digit()).parse().unwrap_or(0)
}

/// Folds run events in log order.
fn fold_runs(path: &Path, events: Vec<RunEvent>) -> Result<BTreeMap<String, Run>, StoreError> {
    let bad = |message: String| StoreError::Corrupt { path: path.to_path_buf(), line: 0, message };
    let mut runs = BTreeMap::new();
    for event in events {
        match event {
            RunEvent::Created { run } | RunEvent::Snapshot { run } => {
                runs.insert(run.run_id.clone(), run);
            }
            RunEvent::Started { run_id, total_pairs } => {
                let run: &mut Run =
                    runs.get_mut(&run_id).ok_or_else(|| bad(format!("start of unknown run {run_id}")))?;
                if !run.state.can_move_to(RunState::Running) {
                    return Err(bad(format!("run {run_id} cannot start from {:?}", run.state)));
                }
                run.state = RunState::Running;
                run.progress = Progress { done_pairs: 0, total_pairs };
            }
            RunEvent::Finished { run_id, state, at, progress, error } => {
                let run = runs.get_mut(&run_id).ok_or_else(|| bad(format!("end of unknown run {run_id}")))?;
                if !state.is_terminal() || !run.state.can_move_to(state) {
                    return Err(bad(format!("run {run_id} cannot move from {:?} to {state:?}", run.state)));
                }
                run.state = state;
                run.finished_at = Some(at);
                run.progress = progress;
                run.error = error;
            }
        }
    }
    Ok(runs)
}

#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    runs_log: AppendLog,
    adjudications_log: AppendLog,
    runs: BTreeMap<String, Run>,
    adjudications: Vec<Adjudication>,
    by_key: HashMap<String, usize>,
    detections: HashMap<String, Arc<Vec<Detection>>>,
    next_run: u64,
    next_adjudication: u64,
}

impl Store {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        for sub in [DETECTIONS_DIR, CORPORA_DIR] {
            std::fs::create_dir_all(dir.join(sub)).map_err(|e| StoreError::io(&dir.join(sub), e))?;
        }
        let (runs_log, events) = AppendLog::open::<RunEvent>(&dir.join(RUNS_LOG))?;
        let runs = fold_runs(runs_log.path(), events)?;
        let (adjudications_log, adjudications) = AppendLog::open::<Adjudication>(&dir.join(ADJUDICATIONS_LOG))?;
        let by_key =
            adjudications.iter().enumerate().filter_map(|(i, a)| a.idempotency_key.clone().map(|k| (k, i))).collect();
        let next_run = runs.keys().map(|id| numeric_suffix(id)).max().unwrap_or(0) + 1;
        let next_adjudication = adjudications.iter().map(|a| numeric_suffix(&a.adjudication_id)).max().unwrap_or(0) + 1;
        Ok(Self {
            dir,
            runs_log,
            adjudications_log,
            runs,
            adjudications,
            by_key,
            detections: HashMap::new(),
            next_run,
            next_adjudication,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Fails runs that were executing when the process stopped and returns
    /// the pending runs, oldest first, for requeueing.
    pub fn recover(&mut self) -> Result<Vec<String>, StoreError> {
        let interrupted: Vec<String> =
            self.runs.values().filter(|r| r.state == RunState::Running).map(|r| r.run_id.clone()).collect();
        for id in interrupted {
            log::warn!("run {id} was interrupted; marking it failed");
            let _ = std::fs::remove_file(self.detections_path(&id));
            let progress = self.runs[&id].progress;
            self.finish(&id, RunState::Failed, progress, Some("interrupted by service restart".into()), Utc::now())?;
        }
        let mut pending: Vec<&Run> = self.runs.values().filter(|r| r.state == RunState::Pending).collect();
        pending.sort_by_key(|a| (a.created_at, numeric_suffix(&a.run_id)));
        Ok(pending.into_iter().map(|r| r.run_id.clone()).collect())
    }

    pub fn runs(&self) -> impl Iterator<Item = &Run> {
        self.runs.values()
    }

    pub fn run(&self, run_id: &str) -> Option<&Run> {
        self.runs.get(run_id)
    }

    pub fn create_run(&mut self, backend_id: &str, corpus_ref: &str, now: DateTime<Utc>) -> Result<Run, StoreError> {
        let run = Run {
            run_id: format!("R{:06}", self.next_run),
            backend_id: backend_id.to_string(),
            corpus_ref: corpus_ref.to_string(),
            state: RunState::Pending,
            created_at: now,
            finished_at: None,
            progress: Progress::default(),
            error: None,
        };
        self.runs_log.append(&RunEvent::Created { run: run.clone() })?;
        self.next_run += 1;
        self.runs.insert(run.run_id.clone(), run.clone());
        Ok(run)
    }

    pub fn start_run(&mut self, run_id: &str, total_pairs: usize) -> Result<(), StoreError> {
        let state = self.runs.get(run_id).ok_or_else(|| StoreError::UnknownRun(run_id.into()))?.state;
        if !state.can_move_to(RunState::Running) {
            return Err(StoreError::Transition { run_id: run_id.into(), from: state, to: RunState::Running });
        }
        self.runs_log.append(&RunEvent::Started { run_id: run_id.into(), total_pairs })?;
        let run = self.runs.get_mut(run_id).expect("checked");
        run.state = RunState::Running;
        run.progress = Progress { done_pairs: 0, total_pairs };
        Ok(())
    }

    /// In-memory only; progress never moves backwards.
    pub fn set_progress(&mut self, run_id: &str, done_pairs: usize) {
        if let Some(run) = self.runs.get_mut(run_id) {
            if run.state == RunState::Running {
                run.progress.done_pairs = run.progress.done_pairs.max(done_pairs);
            }
        }
    }

    pub fn detections_path(&self, run_id: &str) -> PathBuf {
        self.dir.join(DETECTIONS_DIR).join(format!("{run_id}.jsonl"))
    }

    /// Persists the detection file, then records the run as done.
    pub fn complete_run(&mut self, run_id: &str, detections: Vec<Detection>) -> Result<(), StoreError> {
        write_atomic(&self.detections_path(run_id), to_jsonl_string(&detections).as_bytes())?;
        let progress = Progress { done_pairs: detections.len(), total_pairs: detections.len() };
        self.finish(run_id, RunState::Done, progress, None, Utc::now())?;
        self.detections.insert(run_id.to_string(), Arc::new(detections));
        Ok(())
    }

    pub fn fail_run(&mut self, run_id: &str, error: String) -> Result<(), StoreError> {
        let progress = self.runs.get(run_id).map(|r| r.progress).unwrap_or_default();
        self.finish(run_id, RunState::Failed, progress, Some(error), Utc::now())
    }

    fn finish(
        &mut self,
        run_id: &str,
        state: RunState,
        progress: Progress,
        error: Option<String>,
        at: DateTime<Utc>,
    ) -> Result<(), StoreError> {
        let from = self.runs.get(run_id).ok_or_else(|| StoreError::UnknownRun(run_id.into()))?.state;
        if !from.can_move_to(state) {
            return Err(StoreError::Transition { run_id: run_id.into(), from, to: state });
        }
        self.runs_log.append(&RunEvent::Finished {
            run_id: run_id.into(),
            state,
            at,
            progress,
            error: error.clone(),
        })?;
        let run = self.runs.get_mut(run_id).expect("checked");
        run.state = state;
        run.finished_at = Some(at);
        run.progress = progress;
        run.error = error;
        Ok(())
    }

    /// Detections of a finished run, loaded from disk on first use.
    pub fn detections(&mut self, run_id: &str) -> Result<Option<Arc<Vec<Detection>>>, StoreError> {
        match self.runs.get(run_id) {
            Some(r) if r.state == RunState::Done => {}
            _ => return Ok(None),
        }
        if let Some(d) = self.detections.get(run_id) {
            return Ok(Some(d.clone()));
        }
        let path = self.detections_path(run_id);
        let file = std::fs::File::open(&path).map_err(|e| StoreError::io(&path, e))?;
        let dets: Vec<Detection> = parse_jsonl(std::io::BufReader::new(file), &path.display().to_string())
            .map_err(|e| StoreError::Corrupt { path: path.clone(), line: 0, message: e.to_string() })?;
        let dets = Arc::new(dets);
        self.detections.insert(run_id.to_string(), dets.clone());
        Ok(Some(dets))
    }

    /// The adjudication previously recorded under `key`, if any.
    pub fn by_idempotency_key(&self, key: &str) -> Option<&Adjudication> {
        self.by_key.get(key).map(|&i| &self.adjudications[i])
    }

    /// Appends an adjudication. The request must already be validated.
    pub fn record_adjudication(
        &mut self,
        req: AdjudicationRequest,
        idempotency_key: Option<String>,
        now: DateTime<Utc>,
    ) -> Result<Adjudication, StoreError> {
        let adj = Adjudication {
            adjudication_id: format!("A{:06}", self.next_adjudication),
            run_id: req.run_id,
            note_id: req.note_id,
            category_id: req.category_id,
            verdict: req.verdict,
            corrected_evidence: req.corrected_evidence,
            reviewer: req.reviewer,
            timestamp: now,
            idempotency_key,
        };
        self.adjudications_log.append(&adj)?;
        self.next_adjudication += 1;
        if let Some(k) = &adj.idempotency_key {
            self.by_key.insert(k.clone(), self.adjudications.len());
        }
        self.adjudications.push(adj.clone());
        Ok(adj)
    }

    /// All adjudications in log order.
    pub fn adjudications(&self) -> &[Adjudication] {
        &self.adjudications
    }

    pub fn adjudications_for<'a>(&'a self, run_id: &'a str) -> impl Iterator<Item = &'a Adjudication> + 'a {
        self.adjudications.iter().filter(move |a| a.run_id == run_id)
    }
}

/// What compaction changed.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct CompactionReport {
    pub runs: usize,
    pub run_events_before: usize,
    pub adjudications_before: usize,
    pub adjudications_after: usize,
    pub orphan_detection_files: usize,
}

/// Rewrites the logs of a stopped service: one snapshot per run, and only
/// adjudications that are still live or carry an idempotency key. Live
/// adjudications keep their relative order, so projections are unchanged.
pub fn compact(dir: impl AsRef<Path>) -> Result<CompactionReport, StoreError> {
    let dir = dir.as_ref();
    let store = Store::open(dir)?;
    let (_, events) = AppendLog::open::<RunEvent>(&dir.join(RUNS_LOG))?;
    let mut report = CompactionReport {
        runs: store.runs.len(),
        run_events_before: events.len(),
        adjudications_before: store.adjudications.len(),
        ..Default::default()
    };

    let mut runs: Vec<&Run> = store.runs.values().collect();
    runs.sort_by_key(|r| numeric_suffix(&r.run_id));
    let snapshots: Vec<RunEvent> = runs.iter().map(|r| RunEvent::Snapshot { run: (*r).clone() }).collect();

    let mut latest: HashMap<(&str, &str, &str, &str), usize> = HashMap::new();
    for (i, a) in store.adjudications.iter().enumerate() {
        latest.insert((&a.run_id, &a.note_id, &a.category_id, &a.reviewer), i);
    }
    let kept: Vec<&Adjudication> = store
        .adjudications
        .iter()
        .enumerate()
        .filter(|(i, a)| {
            a.idempotency_key.is_some() || latest[&(&*a.run_id, &*a.note_id, &*a.category_id, &*a.reviewer)] == *i
        })
        .map(|(_, a)| a)
        .collect();
    report.adjudications_after = kept.len();

    let det_dir = dir.join(DETECTIONS_DIR);
    let entries = std::fs::read_dir(&det_dir).map_err(|e| StoreError::io(&det_dir, e))?;
    for entry in entries.flatten() {
        let path = entry.path();
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let live = path.extension().is_some_and(|e| e == "jsonl")
            && store.run(&stem).is_some_and(|r| r.state == RunState::Done);
        if !live {
            std::fs::remove_file(&path).map_err(|e| StoreError::io(&path, e))?;
            report.orphan_detection_files += 1;
        }
    }

    write_atomic(&dir.join(RUNS_LOG), to_jsonl_string(&snapshots).as_bytes())?;
    write_atomic(&dir.join(ADJUDICATIONS_LOG), to_jsonl_string(&kept).as_bytes())?;
    Ok(report)
}

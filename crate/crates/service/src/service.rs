//! Service state shared by the HTTP handlers and the run worker.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::panic::AssertUnwindSafe;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{channel, Sender};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::Instant;

use chrono::{NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use symscreen_core::corpus::to_jsonl_string;
use symscreen_core::extract::{run_extraction, Extractor};
use symscreen_core::screen::{vectorize, SymptomVector, VectorizeOptions};
use symscreen_core::taxonomy::taxonomy;
use symscreen_core::{BackendConfig, Corpus, Detection, GoldLabel};
use thiserror::Error;

use crate::config::{valid_corpus_ref, ServiceConfig};
use crate::model::{Adjudication, AdjudicationRequest, Run, RunState, Verdict};
use crate::projection::{merge_gold, project_gold, Conflict, Projection};
use crate::store::{Store, CORPORA_DIR};
use crate::StoreError;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Internal(String),
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct ReviewFilter {
    pub category: Option<String>,
    #[serde(default)]
    pub only_positive: bool,
    #[serde(default)]
    pub unreviewed_only: bool,
    /// Restrict `unreviewed_only` and the attached adjudication to one reviewer.
    pub reviewer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Highlight {
    pub start: usize,
    pub end: usize,
    pub category_id: String,
    pub display_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub detection: Detection,
    pub patient_id: String,
    pub note_date: NaiveDate,
    pub note_text: String,
    pub highlights: Vec<Highlight>,
    /// Latest live adjudication of the pair, if any.
    pub adjudication: Option<Adjudication>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub pending: usize,
    pub running: usize,
    pub done: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub uptime_secs: u64,
    pub requests_total: u64,
    pub runs: RunCounts,
    pub detections_total: usize,
    pub adjudications_total: usize,
    pub adjudications_created: u64,
    pub idempotent_replays: u64,
    pub corpora_loaded: usize,
}

#[derive(Debug, Default)]
struct Counters {
    requests: AtomicU64,
    adjudications_created: AtomicU64,
    idempotent_replays: AtomicU64,
}

struct Corpora {
    root: std::path::PathBuf,
    cache: Mutex<HashMap<String, Arc<Corpus>>>,
}

impl Corpora {
    fn get(&self, corpus_ref: &str) -> Result<Arc<Corpus>, ServiceError> {
        if !valid_corpus_ref(corpus_ref) {
            return Err(ServiceError::NotFound(format!("unknown corpus `{corpus_ref}`")));
        }
        let mut cache = self.cache.lock().expect("corpus cache lock");
        if let Some(c) = cache.get(corpus_ref) {
            return Ok(c.clone());
        }
        let dir = self.root.join(corpus_ref);
        if !dir.is_dir() {
            return Err(ServiceError::NotFound(format!("unknown corpus `{corpus_ref}`")));
        }
        let corpus = Arc::new(Corpus::ingest(&dir).map_err(|e| ServiceError::Internal(e.to_string()))?);
        cache.insert(corpus_ref.to_string(), corpus.clone());
        Ok(corpus)
    }

    fn loaded(&self) -> usize {
        self.cache.lock().expect("corpus cache lock").len()
    }
}

struct Shared {
    config: ServiceConfig,
    store: Mutex<Store>,
    corpora: Corpora,
    backends: BTreeMap<String, BackendConfig>,
    counters: Counters,
    started: Instant,
    stopping: AtomicBool,
}

impl Shared {
    fn store(&self) -> MutexGuard<'_, Store> {
        self.store.lock().expect("store lock")
    }
}

/// A running service instance. Dropping it stops the run worker after the
/// current run.
pub struct Service {
    shared: Arc<Shared>,
    queue: Mutex<Option<Sender<String>>>,
    worker: Mutex<Option<JoinHandle<()>>>,
}

impl Service {
    /// Replays the data directory, fails interrupted runs, and requeues
    /// pending ones on a fresh worker thread.
    pub fn open(config: ServiceConfig) -> Result<Self, ServiceError> {
        let backends = config.backend_table()?;
        let mut store = Store::open(&config.data_dir)?;
        let pending = store.recover()?;
        let shared = Arc::new(Shared {
            corpora: Corpora { root: config.data_dir.join(CORPORA_DIR), cache: Mutex::default() },
            config,
            store: Mutex::new(store),
            backends,
            counters: Counters::default(),
            started: Instant::now(),
            stopping: AtomicBool::new(false),
        });
        let (tx, rx) = channel::<String>();
        let worker_state = shared.clone();
        let worker = std::thread::Builder::new()
            .name("symscreen-runs".into())
            .spawn(move || {
                for run_id in rx {
                    if worker_state.stopping.load(Ordering::SeqCst) {
                        break;
                    }
                    execute(&worker_state, &run_id);
                }
            })
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        for id in pending {
            tx.send(id).expect("worker alive");
        }
        Ok(Self { shared, queue: Mutex::new(Some(tx)), worker: Mutex::new(Some(worker)) })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.shared.config
    }

    pub fn count_request(&self) {
        self.shared.counters.requests.fetch_add(1, Ordering::Relaxed);
    }

    /// Stops accepting runs and waits for the current run to finish. Queued
    /// runs stay pending and are picked up by the next start.
    pub fn shutdown(&self) {
        self.shared.stopping.store(true, Ordering::SeqCst);
        self.queue.lock().expect("queue lock").take();
        if let Some(h) = self.worker.lock().expect("worker lock").take() {
            let _ = h.join();
        }
    }

    pub fn start_run(&self, backend_id: &str, corpus_ref: &str) -> Result<Run, ServiceError> {
        if !self.shared.backends.contains_key(backend_id) {
            return Err(ServiceError::NotFound(format!("unknown backend `{backend_id}`")));
        }
        self.shared.corpora.get(corpus_ref)?;
        let queue = self.queue.lock().expect("queue lock");
        let tx = queue.as_ref().ok_or_else(|| ServiceError::Conflict("service is shutting down".into()))?;
        let run = self.shared.store().create_run(backend_id, corpus_ref, Utc::now())?;
        tx.send(run.run_id.clone()).map_err(|_| ServiceError::Internal("run worker stopped".into()))?;
        Ok(run)
    }

    pub fn run(&self, run_id: &str) -> Result<Run, ServiceError> {
        self.shared.store().run(run_id).cloned().ok_or_else(|| unknown_run(run_id))
    }

    pub fn runs(&self) -> Vec<Run> {
        self.shared.store().runs().cloned().collect()
    }

    pub fn backends(&self) -> Vec<String> {
        self.shared.backends.keys().cloned().collect()
    }

    fn done_detections(&self, store: &mut Store, run_id: &str) -> Result<Arc<Vec<Detection>>, ServiceError> {
        let run = store.run(run_id).ok_or_else(|| unknown_run(run_id))?;
        if run.state != RunState::Done {
            return Err(ServiceError::Conflict(format!("run `{run_id}` is {:?}, not done", run.state).to_lowercase()));
        }
        Ok(store.detections(run_id)?.expect("done runs have detections"))
    }

    pub fn detections(&self, run_id: &str) -> Result<Arc<Vec<Detection>>, ServiceError> {
        let mut store = self.shared.store();
        self.done_detections(&mut store, run_id)
    }

    pub fn review_queue(&self, run_id: &str, filter: &ReviewFilter) -> Result<Vec<ReviewItem>, ServiceError> {
        if let Some(c) = &filter.category {
            if taxonomy().get(c).is_none() {
                return Err(ServiceError::Invalid(format!("unknown category `{c}`")));
            }
        }
        let (corpus_ref, detections, live) = {
            let mut store = self.shared.store();
            let detections = self.done_detections(&mut store, run_id)?;
            let mut live: HashMap<(String, String), Adjudication> = HashMap::new();
            for a in store.adjudications_for(run_id) {
                if filter.reviewer.as_ref().is_some_and(|r| *r != a.reviewer) {
                    continue;
                }
                live.insert((a.note_id.clone(), a.category_id.clone()), a.clone());
            }
            (store.run(run_id).expect("checked").corpus_ref.clone(), detections, live)
        };
        let corpus = self.shared.corpora.get(&corpus_ref)?;
        let mut items = Vec::new();
        for d in detections.iter() {
            if filter.category.as_ref().is_some_and(|c| *c != d.category_id) || (filter.only_positive && !d.present) {
                continue;
            }
            let adjudication = live.get(&(d.note_id.clone(), d.category_id.clone())).cloned();
            if filter.unreviewed_only && adjudication.is_some() {
                continue;
            }
            let note = corpus
                .note(&d.note_id)
                .ok_or_else(|| ServiceError::Internal(format!("note `{}` missing from corpus", d.note_id)))?;
            let display_name = taxonomy().get(&d.category_id).map(|c| c.display_name.clone()).unwrap_or_default();
            let highlights = d
                .evidence
                .iter()
                .filter_map(|e| e.span())
                .filter(|s| s.slice(&note.text).is_some())
                .map(|s| Highlight {
                    start: s.start,
                    end: s.end,
                    category_id: d.category_id.clone(),
                    display_name: display_name.clone(),
                })
                .collect();
            items.push(ReviewItem {
                detection: d.clone(),
                patient_id: note.patient_id.clone(),
                note_date: note.date,
                note_text: note.text.clone(),
                highlights,
                adjudication,
            });
        }
        items.sort_by(|a, b| {
            (&a.detection.note_id, &a.detection.category_id).cmp(&(&b.detection.note_id, &b.detection.category_id))
        });
        Ok(items)
    }

    /// Validates and appends an adjudication. Returns the stored record and
    /// whether it was newly created; a repeated idempotency key with the same
    /// request returns the original.
    pub fn adjudicate(
        &self,
        req: AdjudicationRequest,
        idempotency_key: Option<String>,
    ) -> Result<(Adjudication, bool), ServiceError> {
        if req.reviewer.trim().is_empty() {
            return Err(ServiceError::Invalid("reviewer must not be empty".into()));
        }
        match (req.verdict, &req.corrected_evidence) {
            (Verdict::Modify, None) => return Err(ServiceError::Invalid("modify requires corrected_evidence".into())),
            (Verdict::Modify, Some(spans)) if spans.is_empty() => {
                return Err(ServiceError::Invalid("modify requires at least one corrected span".into()))
            }
            (Verdict::Accept | Verdict::Reject, Some(_)) => {
                return Err(ServiceError::Invalid("corrected_evidence is only allowed with modify".into()))
            }
            _ => {}
        }
        let corpus_ref = self.run(&req.run_id)?.corpus_ref;
        let corpus = self.shared.corpora.get(&corpus_ref)?;

        let mut store = self.shared.store();
        if let Some(key) = &idempotency_key {
            if let Some(existing) = store.by_idempotency_key(key) {
                if existing.matches(&req) {
                    self.shared.counters.idempotent_replays.fetch_add(1, Ordering::Relaxed);
                    return Ok((existing.clone(), false));
                }
                return Err(ServiceError::Conflict(format!(
                    "idempotency key `{key}` was used for a different adjudication"
                )));
            }
        }
        let detections = self.done_detections(&mut store, &req.run_id)?;
        if !detections.iter().any(|d| d.note_id == req.note_id && d.category_id == req.category_id) {
            return Err(ServiceError::NotFound(format!(
                "run `{}` has no detection for ({}, {})",
                req.run_id, req.note_id, req.category_id
            )));
        }
        if let Some(spans) = &req.corrected_evidence {
            let text = &corpus.note(&req.note_id).expect("detections reference corpus notes").text;
            for s in spans {
                if s.start >= s.end || s.slice(text).is_none() {
                    return Err(ServiceError::Invalid(format!(
                        "span {}..{} is empty, out of bounds or not on character boundaries",
                        s.start, s.end
                    )));
                }
            }
        }
        let adj = store.record_adjudication(req, idempotency_key, Utc::now())?;
        self.shared.counters.adjudications_created.fetch_add(1, Ordering::Relaxed);
        Ok((adj, true))
    }

    fn projection(&self, run_id: &str) -> Result<(Projection, String), ServiceError> {
        let mut store = self.shared.store();
        let run = store.run(run_id).ok_or_else(|| unknown_run(run_id))?.clone();
        let detections = store.detections(run_id)?.unwrap_or_default();
        Ok((project_gold(store.adjudications_for(run_id), &detections), run.corpus_ref))
    }

    /// Gold labels for a run, as `gold.jsonl` content. Merge mode overlays
    /// them on the corpus's own gold labels.
    pub fn gold(&self, run_id: &str, merge: Option<bool>) -> Result<(Vec<GoldLabel>, usize), ServiceError> {
        let (projection, corpus_ref) = self.projection(run_id)?;
        let conflicts = projection.conflicts.len();
        if merge.unwrap_or(self.shared.config.merge_gold) {
            let corpus = self.shared.corpora.get(&corpus_ref)?;
            return Ok((merge_gold(corpus.gold(), &projection.gold), conflicts));
        }
        Ok((projection.gold, conflicts))
    }

    pub fn gold_jsonl(&self, run_id: &str, merge: Option<bool>) -> Result<String, ServiceError> {
        Ok(to_jsonl_string(&self.gold(run_id, merge)?.0))
    }

    pub fn conflicts(&self, run_id: &str) -> Result<Vec<Conflict>, ServiceError> {
        Ok(self.projection(run_id)?.0.conflicts)
    }

    /// A patient's symptom vector from the given run, or from the newest
    /// done run whose corpus contains the patient.
    pub fn patient_vector(
        &self,
        patient_id: &str,
        run_id: Option<&str>,
        window_days: Option<u32>,
    ) -> Result<SymptomVector, ServiceError> {
        let candidates: Vec<Run> = match run_id {
            Some(id) => vec![self.run(id)?],
            None => {
                let mut runs: Vec<Run> = self.runs().into_iter().filter(|r| r.state == RunState::Done).collect();
                runs.sort_by(|a, b| b.run_id.cmp(&a.run_id));
                runs
            }
        };
        for run in candidates {
            let corpus = self.shared.corpora.get(&run.corpus_ref)?;
            if corpus.patient(patient_id).is_none() {
                continue;
            }
            let detections = self.detections(&run.run_id)?;
            let opts = VectorizeOptions { window_days, ..Default::default() };
            let mine: HashSet<&str> =
                corpus.notes().iter().filter(|n| n.patient_id == patient_id).map(|n| n.note_id.as_str()).collect();
            let subset = corpus.filter_notes(|n| mine.contains(n.note_id.as_str()));
            let vectors = vectorize(&detections, &subset, opts);
            return vectors
                .vectors
                .into_iter()
                .find(|v| v.patient_id == patient_id)
                .ok_or_else(|| ServiceError::NotFound(format!("patient `{patient_id}` has no notes in range")));
        }
        Err(ServiceError::NotFound(format!("no finished run covers patient `{patient_id}`")))
    }

    pub fn metrics(&self) -> MetricsSnapshot {
        let store = self.shared.store();
        let mut runs = RunCounts::default();
        let mut detections_total = 0;
        for r in store.runs() {
            match r.state {
                RunState::Pending => runs.pending += 1,
                RunState::Running => runs.running += 1,
                RunState::Done => {
                    runs.done += 1;
                    detections_total += r.progress.total_pairs;
                }
                RunState::Failed => runs.failed += 1,
            }
        }
        let c = &self.shared.counters;
        MetricsSnapshot {
            uptime_secs: self.shared.started.elapsed().as_secs(),
            requests_total: c.requests.load(Ordering::Relaxed),
            runs,
            detections_total,
            adjudications_total: store.adjudications().len(),
            adjudications_created: c.adjudications_created.load(Ordering::Relaxed),
            idempotent_replays: c.idempotent_replays.load(Ordering::Relaxed),
            corpora_loaded: self.shared.corpora.loaded(),
        }
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn unknown_run(run_id: &str) -> ServiceError {
    ServiceError::NotFound(format!("unknown run `{run_id}`"))
}

fn execute(shared: &Shared, run_id: &str) {
    let Some(run) = shared.store().run(run_id).cloned() else { return };
    if run.state != RunState::Pending {
        return;
    }
    let fail = |msg: String| {
        log::error!("run {run_id} failed: {msg}");
        if let Err(e) = shared.store().fail_run(run_id, msg) {
            log::error!("cannot record failure of run {run_id}: {e}");
        }
    };
    let prepared = shared.corpora.get(&run.corpus_ref).and_then(|corpus| {
        let config = shared
            .backends
            .get(&run.backend_id)
            .ok_or_else(|| ServiceError::NotFound(format!("unknown backend `{}`", run.backend_id)))?
            .clone()
            .with_env_overrides();
        let ex = Extractor::new(config, &corpus).map_err(|e| ServiceError::Invalid(e.to_string()))?;
        Ok((corpus, ex))
    });
    let (corpus, extractor) = match prepared {
        Ok(p) => p,
        Err(e) => return fail(e.to_string()),
    };
    let categories = taxonomy().categories();
    if let Err(e) = shared.store().start_run(run_id, corpus.notes().len() * categories.len()) {
        return fail(e.to_string());
    }
    log::info!("run {run_id}: {} over corpus {}", run.backend_id, run.corpus_ref);
    let progress = |done: usize, _total: usize| shared.store().set_progress(run_id, done);
    let outcome =
        std::panic::catch_unwind(AssertUnwindSafe(|| run_extraction(&extractor, &corpus, categories, Some(&progress))));
    match outcome {
        Ok(detections) => {
            if let Err(e) = shared.store().complete_run(run_id, detections) {
                fail(e.to_string());
            }
        }
        Err(_) => fail("extraction panicked".into()),
    }
}

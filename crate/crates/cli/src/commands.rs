//! One function per subcommand.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use clap::{ArgAction, Args, ValueEnum};
use serde::Serialize;
use symscreen_core::corpus::{
    cohort_stats, read_jsonl, synthesize, write_jsonl, CohortOptions, Denominator, PhqParseOptions, SynthSpec,
};
use symscreen_core::eval::{render_report, score_with, ReportFormat, ScoreOptions};
use symscreen_core::extract::{run_extraction, Extractor};
use symscreen_core::screen::{bow_features, run_bench, vectorize, FeatureSets, ModelKind, ModelSpec, VectorizeOptions};
use symscreen_core::taxonomy::taxonomy;
use symscreen_core::{BackendKind, Corpus, Detection, DetectionStatus, GoldLabel, SymptomCategory};
use symscreen_service::{
    compact as compact_store, install_corpus, serve_blocking, Service, ServiceConfig, ServiceError, DEFAULT_LISTEN,
};

use crate::config::CliConfig;
use crate::{render, CliError, Format};

fn validation(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn service_error(e: ServiceError) -> CliError {
    match e {
        ServiceError::Invalid(_) | ServiceError::Conflict(_) | ServiceError::NotFound(_) => validation(e),
        other => runtime(other),
    }
}

fn print(out: &str) -> Result<(), CliError> {
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(out.as_bytes()).and_then(|()| stdout.flush()).map_err(runtime)
}

fn load_corpus(dir: &Path) -> Result<Corpus, CliError> {
    Corpus::ingest(dir).map_err(|e| CliError::Validation(format!("corpus {}: {e}", dir.display())))
}

fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("output serializes");
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    /// Per-category rates derived from reference screening-cohort counts,
    /// with paraphrases, negations, distractors and PHQ lines.
    Reference,
    /// One rate for every category in each group; literal mentions only.
    Uniform,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 50)]
    pub cases: usize,
    #[arg(long, default_value_t = 50)]
    pub controls: usize,
    /// Output corpus directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Profile::Reference)]
    pub profile: Profile,
    /// Full generator spec as TOML; overrides the profile.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Per-note planting rate for cases under the uniform profile.
    #[arg(long, default_value_t = 0.3)]
    pub case_rate: f64,
    /// Per-note planting rate for controls under the uniform profile.
    #[arg(long, default_value_t = 0.05)]
    pub control_rate: f64,
    #[arg(long)]
    pub paraphrase_rate: Option<f64>,
    #[arg(long)]
    pub negation_rate: Option<f64>,
    #[arg(long)]
    pub distractor_rate: Option<f64>,
    #[arg(long)]
    pub phq_rate: Option<f64>,
}

#[derive(Serialize)]
struct SynthSummary {
    out: String,
    seed: u64,
    patients: usize,
    cases: usize,
    notes: usize,
    gold_labels: usize,
    positive_labels: usize,
}

pub fn synth(a: SynthArgs, config: &CliConfig, format: Format) -> Result<(), CliError> {
    let seed = a.seed.unwrap_or(config.defaults.seed);
    let mut spec = match &a.spec {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
            let mut spec: SynthSpec =
                toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
            if let Some(s) = a.seed {
                spec.seed = s;
            }
            spec
        }
        None => match a.profile {
            Profile::Reference => SynthSpec::reference_rates(seed, a.cases, a.controls),
            Profile::Uniform => SynthSpec::uniform(seed, a.cases, a.controls, a.case_rate, a.control_rate),
        },
    };
    for (slot, value) in [
        (&mut spec.paraphrase_rate, a.paraphrase_rate),
        (&mut spec.negation_rate, a.negation_rate),
        (&mut spec.distractor_rate, a.distractor_rate),
        (&mut spec.phq_rate, a.phq_rate),
    ] {
        if let Some(v) = value {
            *slot = v;
        }
    }
    let corpus = synthesize(&spec).map_err(validation)?;
    corpus.write_dir(&a.out).map_err(runtime)?;
    let summary = SynthSummary {
        out: a.out.display().to_string(),
        seed: spec.seed,
        patients: corpus.patients().len(),
        cases: corpus.patients().iter().filter(|p| p.is_case).count(),
        notes: corpus.notes().len(),
        gold_labels: corpus.gold().len(),
        positive_labels: corpus.gold().iter().filter(|g| g.present).count(),
    };
    print(&render::summary(format, &summary))
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Corpus directory holding patients.jsonl, notes.jsonl and optionally gold.jsonl.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Install the corpus into the service data directory under this ref.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Serialize)]
struct IngestSummary {
    corpus: String,
    patients: usize,
    cases: usize,
    notes: usize,
    gold_labels: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    installed_at: Option<String>,
}

pub fn ingest(a: IngestArgs, config: &CliConfig, format: Format) -> Result<(), CliError> {
    let corpus = load_corpus(&a.corpus)?;
    let installed_at = match &a.name {
        Some(name) => {
            let data_dir = a.data_dir.as_deref().unwrap_or(&config.data_dir);
            Some(install_corpus(data_dir, name, &corpus).map_err(service_error)?.display().to_string())
        }
        None => None,
    };
    let summary = IngestSummary {
        corpus: a.corpus.display().to_string(),
        patients: corpus.patients().len(),
        cases: corpus.patients().iter().filter(|p| p.is_case).count(),
        notes: corpus.notes().len(),
        gold_labels: corpus.gold().len(),
        installed_at,
    };
    print(&render::summary(format, &summary))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DenominatorArg {
    /// Patients with at least one PHQ record.
    RecordedPhq,
    /// Every patient in the age bin.
    Cohort,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = DenominatorArg::RecordedPhq)]
    pub denominator: DenominatorArg,
    /// Treat a PHQ score without an item count as a full PHQ-9.
    #[arg(long, action = ArgAction::Set, default_value_t = true)]
    pub assume_full: bool,
}

pub fn stats(a: StatsArgs, format: Format) -> Result<(), CliError> {
    let corpus = load_corpus(&a.corpus)?;
    let options = CohortOptions {
        denominator: match a.denominator {
            DenominatorArg::RecordedPhq => Denominator::RecordedPhq,
            DenominatorArg::Cohort => Denominator::Cohort,
        },
        phq: PhqParseOptions { assume_full: a.assume_full },
    };
    print(&render::cohort(format, &cohort_stats(&corpus, options)))
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Backend id: `keyword`, `mock`, or one from the config's backend table.
    #[arg(long)]
    pub backend: String,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Detections output (JSON lines). A `<out>.meta.json` sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub char_limit: Option<usize>,
    /// Seed for the noisy mock.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated category ids; all categories by default.
    #[arg(long, value_delimiter = ',')]
    pub categories: Vec<String>,
    /// Suppress progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Serialize)]
struct ExtractMeta {
    backend_id: String,
    kind: BackendKind,
    /// Wire backends answer from a remote model and are not reproducible.
    deterministic: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    model_name: Option<String>,
    seed: u64,
    char_limit: usize,
    notes: usize,
    categories: usize,
    detections: usize,
    positive: usize,
    status_counts: BTreeMap<String, usize>,
}

fn status_name(s: DetectionStatus) -> String {
    serde_json::to_value(s).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_else(|| format!("{s:?}"))
}

pub fn meta_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    out.with_file_name(name)
}

pub fn extract(a: ExtractArgs, config: &CliConfig, format: Format) -> Result<(), CliError> {
    let Some(mut backend) = config.backend(&a.backend) else {
        return Err(CliError::Validation(format!(
            "unknown backend `{}` (available: {})",
            a.backend,
            config.backend_ids().join(", ")
        )));
    };
    backend = backend.with_env_overrides();
    if let Some(p) = a.parallelism {
        backend.parallelism = p;
    }
    if let Some(c) = a.char_limit {
        backend.char_limit = c;
    }
    if let Some(s) = a.seed {
        backend.seed = s;
    }
    backend.validate().map_err(validation)?;

    let categories: Vec<SymptomCategory> = if a.categories.is_empty() {
        taxonomy().categories().to_vec()
    } else {
        a.categories.iter().map(|id| taxonomy().require(id).cloned()).collect::<Result<_, _>>().map_err(validation)?
    };
    let corpus = load_corpus(&a.corpus)?;
    let extractor = Extractor::new(backend.clone(), &corpus).map_err(validation)?;

    let step = AtomicUsize::new(0);
    let report = |done: usize, total: usize| {
        let tenth = done * 10 / total.max(1);
        if step.fetch_max(tenth, Ordering::Relaxed) < tenth {
            eprintln!("extract {}: {done}/{total} pairs", backend.backend_id);
        }
    };
    let detections = run_extraction(&extractor, &corpus, &categories, if a.quiet { None } else { Some(&report) });
    write_jsonl(&a.out, &detections).map_err(runtime)?;

    let mut status_counts = BTreeMap::new();
    for d in &detections {
        *status_counts.entry(status_name(d.status)).or_insert(0) += 1;
    }
    let meta = ExtractMeta {
        backend_id: backend.backend_id.clone(),
        kind: backend.kind,
        deterministic: !backend.kind.is_wire(),
        model_name: backend.kind.is_wire().then(|| backend.model_name.clone()),
        seed: backend.seed,
        char_limit: backend.char_limit,
        notes: corpus.notes().len(),
        categories: categories.len(),
        detections: detections.len(),
        positive: detections.iter().filter(|d| d.present).count(),
        status_counts,
    };
    write_json_file(&meta_path(&a.out), &meta)?;
    print(&render::summary(format, &meta))?;

    let errors = detections.iter().filter(|d| d.status == DetectionStatus::BackendError).count();
    if errors > 0 {
        return Err(CliError::Runtime(format!(
            "{errors} of {} pairs failed at the backend; they are recorded with status backend_error",
            detections.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub detections: PathBuf,
    /// Count undefined metrics as 0 in the averages instead of skipping them.
    #[arg(long)]
    pub na_as_zero: bool,
}

pub fn eval(a: EvalArgs, format: Format) -> Result<(), CliError> {
    let gold: Vec<GoldLabel> = read_jsonl(&a.gold).map_err(validation)?;
    let detections: Vec<Detection> = read_jsonl(&a.detections).map_err(validation)?;
    let report = score_with(&gold, &detections, ScoreOptions { na_as_zero: a.na_as_zero }).map_err(validation)?;
    let format = match format {
        Format::Table => ReportFormat::Table,
        Format::Jsonl => ReportFormat::Jsonl,
        Format::Markdown => ReportFormat::Markdown,
    };
    print(&render_report(&report, format))
}

#[derive(Debug, Args)]
pub struct ScreenArgs {
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Comma-separated: logreg, tree, forest, svm, mlp, bow.
    #[arg(long, value_delimiter = ',', default_value = "logreg,tree,forest,svm,mlp,bow")]
    pub models: Vec<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Keep only notes within this many days of a recorded PHQ.
    #[arg(long)]
    pub window_days: Option<u32>,
    /// Bench results (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct BenchMeta {
    k: usize,
    seed: u64,
    window_days: Option<u32>,
    n_patients: usize,
    n_cases: usize,
    n_skipped: usize,
    backend_ids: Vec<String>,
}

#[derive(Serialize)]
struct BenchFile<'a> {
    meta: BenchMeta,
    results: &'a [symscreen_core::screen::BenchResult],
}

pub fn screen(a: ScreenArgs, config: &CliConfig, format: Format) -> Result<(), CliError> {
    let k = a.k.unwrap_or(config.defaults.k);
    let seed = a.seed.unwrap_or(config.defaults.seed);
    let kinds: Vec<ModelKind> =
        a.models.iter().map(|m| m.trim().parse()).collect::<Result<_, _>>().map_err(validation)?;
    if kinds.is_empty() {
        return Err(CliError::Validation("--models must name at least one model".into()));
    }
    let corpus = load_corpus(&a.corpus)?;
    let detections: Vec<Detection> = read_jsonl(&a.detections).map_err(validation)?;
    let vectorized = vectorize(
        &detections,
        &corpus,
        VectorizeOptions { window_days: a.window_days, phq: PhqParseOptions::default() },
    );
    let labels = vectorized.labels();
    let symptom = vectorized.features();
    let bow = kinds.contains(&ModelKind::BowLogregBaseline).then(|| {
        let ids: Vec<&str> = vectorized.vectors.iter().map(|v| v.patient_id.as_str()).collect();
        bow_features(&corpus, &ids)
    });
    let specs: Vec<ModelSpec> = kinds.iter().map(|&kind| ModelSpec::new(kind, seed)).collect();
    let results = run_bench(&specs, FeatureSets { symptom: &symptom, bow: bow.as_deref() }, &labels, k, seed)
        .map_err(validation)?;

    if let Some(out) = &a.out {
        let backend_ids: BTreeSet<String> = detections.iter().map(|d| d.backend_id.clone()).collect();
        let file = BenchFile {
            meta: BenchMeta {
                k,
                seed,
                window_days: a.window_days,
                n_patients: labels.len(),
                n_cases: labels.iter().filter(|&&y| y).count(),
                n_skipped: vectorized.skipped.len(),
                backend_ids: backend_ids.into_iter().collect(),
            },
            results: &results,
        };
        write_json_file(out, &file)?;
    }
    print(&render::bench(format, &results))
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Address to bind, e.g. 127.0.0.1:8080; port 0 picks a free port.
    #[arg(long)]
    pub listen: Option<String>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Built review UI bundle served at `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    /// Bearer token required on `/api` routes.
    #[arg(long, env = "SYMSCREEN_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
    /// Overlay adjudications on the corpus gold instead of replacing it.
    #[arg(long)]
    pub merge_gold: bool,
}

pub fn serve(a: ServeArgs, config: &CliConfig) -> Result<(), CliError> {
    let data_dir = a.data_dir.unwrap_or_else(|| config.data_dir.clone());
    std::fs::create_dir_all(&data_dir)
        .map_err(|e| CliError::Validation(format!("data dir {}: {e}", data_dir.display())))?;
    let mut service_config = ServiceConfig::new(data_dir);
    service_config.listen =
        a.listen.or_else(|| config.service.listen.clone()).unwrap_or_else(|| DEFAULT_LISTEN.to_string());
    service_config.static_dir = a.static_dir.or_else(|| config.service.static_dir.clone());
    service_config.token = a.token.or_else(|| config.service.token.clone());
    service_config.merge_gold = a.merge_gold || config.service.merge_gold;
    service_config.backends = config.backends.clone();
    let service = Service::open(service_config).map_err(service_error)?;
    serve_blocking(service, |addr| {
        println!("listening on http://{addr}");
        let _ = std::io::stdout().flush();
    })
    .map_err(runtime)
}

pub fn taxonomy_show(format: Format) -> Result<(), CliError> {
    print(&render::taxonomy(format, taxonomy()))
}

#[derive(Debug, Args)]
pub struct CompactArgs {
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

pub fn compact(a: CompactArgs, config: &CliConfig, format: Format) -> Result<(), CliError> {
    let data_dir = a.data_dir.unwrap_or_else(|| config.data_dir.clone());
    if !data_dir.is_dir() {
        return Err(CliError::Validation(format!("data dir {} does not exist", data_dir.display())));
    }
    let report = compact_store(&data_dir).map_err(runtime)?;
    print(&render::summary(format, &report))
}

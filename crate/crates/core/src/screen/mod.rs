//! Per-patient symptom vectors and the case-vs-control classifier bench.

mod auc;
mod bow;
mod models;

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{parse_phq, Corpus, Note, PhqParseOptions};
use crate::eval::metrics;
use crate::extract::Detection;
use crate::taxonomy::taxonomy;

pub use auc::{auc_fraction, auc_roc};
pub use bow::{bow_vector, BOW_DIM};
pub use models::{
    logreg_grad, logreg_loss, mlp_grad, mlp_loss, sigmoid, train, ForestParams, Hyperparams, LogregParams, MlpParams,
    MlpShape, Model, Node, Standardizer, SvmParams, TreeParams,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScreenError {
    #[error(
        "need at least {k} patients per class for {k}-fold splitting (have {positives} cases, {negatives} controls)"
    )]
    TooFewPerClass { k: usize, positives: usize, negatives: usize },
    #[error("k must be at least 2")]
    BadK,
    #[error("AUC is undefined for single-class labels")]
    SingleClass,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid hyperparameters: {0}")]
    Hyperparams(String),
    #[error("unknown model `{0}` (expected logreg, tree, forest, svm, mlp or bow)")]
    UnknownModel(String),
    #[error("bag-of-words model requested without text features")]
    MissingBowFeatures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymptomVector {
    pub patient_id: String,
    /// Fraction of the patient's notes flagged per category, in taxonomy order.
    pub values: Vec<f64>,
    pub n_notes: usize,
    pub is_case: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VectorizeOptions {
    /// Keep only notes within this many days of a recorded PHQ in the same
    /// patient's notes.
    pub window_days: Option<u32>,
    pub phq: PhqParseOptions,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Vectorized {
    pub vectors: Vec<SymptomVector>,
    /// Patients left without notes (after any window filter).
    pub skipped: Vec<String>,
}

impl Vectorized {
    pub fn features(&self) -> Vec<Vec<f64>> {
        self.vectors.iter().map(|v| v.values.clone()).collect()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.vectors.iter().map(|v| v.is_case).collect()
    }
}

/// Notes of one patient that fall within `days` of one of their recorded PHQ
/// questionnaires.
fn in_phq_window<'a>(notes: &[&'a Note], days: u32, phq: PhqParseOptions) -> Vec<&'a Note> {
    let anchors: Vec<NaiveDate> =
        notes.iter().filter(|n| parse_phq(&n.text, phq).iter().any(|i| i.is_recorded())).map(|n| n.date).collect();
    notes
        .iter()
        .copied()
        .filter(|n| anchors.iter().any(|a| (n.date - *a).num_days().abs() <= i64::from(days)))
        .collect()
}

/// One vector per patient with at least one (kept) note, in corpus patient
/// order. Missing and backend-error detections count as negative.
pub fn vectorize(detections: &[Detection], corpus: &Corpus, options: VectorizeOptions) -> Vectorized {
    let tax = taxonomy();
    let positive: HashSet<(&str, &str)> =
        detections.iter().filter(|d| d.present).map(|d| (d.note_id.as_str(), d.category_id.as_str())).collect();
    let by_patient = corpus.notes_by_patient();
    let mut out = Vectorized::default();
    for patient in corpus.patients() {
        let all = by_patient.get(patient.patient_id.as_str()).cloned().unwrap_or_default();
        let notes = match options.window_days {
            Some(days) => in_phq_window(&all, days, options.phq),
            None => all,
        };
        if notes.is_empty() {
            out.skipped.push(patient.patient_id.clone());
            continue;
        }
        let values = tax
            .ids()
            .map(|cat| {
                let hits = notes.iter().filter(|n| positive.contains(&(n.note_id.as_str(), cat))).count();
                hits as f64 / notes.len() as f64
            })
            .collect();
        out.vectors.push(SymptomVector {
            patient_id: patient.patient_id.clone(),
            values,
            n_notes: notes.len(),
            is_case: patient.is_case,
        });
    }
    out
}

/// Hashed term-frequency features of each patient's merged notes, aligned
/// with `patient_ids`.
pub fn bow_features(corpus: &Corpus, patient_ids: &[&str]) -> Vec<Vec<f64>> {
    let by_patient = corpus.notes_by_patient();
    patient_ids
        .iter()
        .map(|id| {
            let notes = by_patient.get(id).map(Vec::as_slice).unwrap_or_default();
            bow_vector(notes.iter().map(|n| n.text.as_str()))
        })
        .collect()
}

/// Stratified, seeded k-fold split returning index folds. Each class is
/// shuffled and dealt round-robin; cases continue where controls stopped so
/// fold sizes differ by at most one.
pub fn kfold_split(labels: &[bool], k: usize, seed: u64) -> Result<Vec<Vec<usize>>, ScreenError> {
    if k < 2 {
        return Err(ScreenError::BadK);
    }
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if pos.len() < k || neg.len() < k {
        return Err(ScreenError::TooFewPerClass { k, positives: pos.len(), negatives: neg.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    neg.shuffle(&mut rng);
    pos.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); k];
    for (j, i) in neg.iter().enumerate() {
        folds[j % k].push(*i);
    }
    let offset = neg.len() % k;
    for (j, i) in pos.iter().enumerate() {
        folds[(offset + j) % k].push(*i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logreg,
    Tree,
    Forest,
    LinearSvm,
    Mlp,
    BowLogregBaseline,
}

impl ModelKind {
    pub const FEATURE_MODELS: [ModelKind; 5] =
        [ModelKind::Logreg, ModelKind::Tree, ModelKind::Forest, ModelKind::LinearSvm, ModelKind::Mlp];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Logreg => "logreg",
            ModelKind::Tree => "tree",
            ModelKind::Forest => "forest",
            ModelKind::LinearSvm => "linear_svm",
            ModelKind::Mlp => "mlp",
            ModelKind::BowLogregBaseline => "bow_logreg_baseline",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Logreg => "Logistic Regression",
            ModelKind::Tree => "Decision Tree",
            ModelKind::Forest => "Random Forest",
            ModelKind::LinearSvm => "Support Vector Machine",
            ModelKind::Mlp => "Multi-layer Perceptron",
            ModelKind::BowLogregBaseline => "Bag-of-words baseline",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = ScreenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "logreg" => ModelKind::Logreg,
            "tree" => ModelKind::Tree,
            "forest" => ModelKind::Forest,
            "svm" | "linear_svm" => ModelKind::LinearSvm,
            "mlp" => ModelKind::Mlp,
            "bow" | "bow_logreg_baseline" => ModelKind::BowLogregBaseline,
            other => return Err(ScreenError::UnknownModel(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default)]
    pub hyperparams: Hyperparams,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    crate::DEFAULT_SEED
}

impl ModelSpec {
    pub fn new(kind: ModelKind, seed: u64) -> Self {
        Self { kind, hyperparams: Hyperparams::default(), seed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub auc_roc: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub model: ModelKind,
    pub auc_roc: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub auc_roc_std: f64,
    pub f1_std: f64,
    pub precision_std: f64,
    pub recall_std: f64,
    pub folds: Vec<FoldResult>,
    pub seed: u64,
}

/// Feature matrices for the bench, rows aligned with the labels.
#[derive(Debug, Clone, Copy)]
pub struct FeatureSets<'a> {
    pub symptom: &'a [Vec<f64>],
    pub bow: Option<&'a [Vec<f64>]>,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn evaluate_fold(scores: &[f64], labels: &[bool]) -> Result<FoldResult, ScreenError> {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= 0.5, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let (p, r, f) = metrics(tp, fp, fn_);
    Ok(FoldResult {
        auc_roc: auc_roc(scores, labels)?,
        f1: f.unwrap_or(0.0),
        precision: p.unwrap_or(0.0),
        recall: r.unwrap_or(0.0),
    })
}

fn bench_one(
    spec: &ModelSpec,
    x: &[Vec<f64>],
    labels: &[bool],
    folds: &[Vec<usize>],
    seed: u64,
) -> Result<BenchResult, ScreenError> {
    let mut results = Vec::with_capacity(folds.len());
    for held_out in folds {
        let test: HashSet<usize> = held_out.iter().copied().collect();
        let (train_x, train_y): (Vec<Vec<f64>>, Vec<bool>) =
            (0..labels.len()).filter(|i| !test.contains(i)).map(|i| (x[i].clone(), labels[i])).unzip();
        let model = train(spec, &train_x, &train_y)?;
        let scores: Vec<f64> = held_out.iter().map(|&i| model.score(&x[i])).collect();
        let truth: Vec<bool> = held_out.iter().map(|&i| labels[i]).collect();
        results.push(evaluate_fold(&scores, &truth)?);
    }
    let stat = |f: fn(&FoldResult) -> f64| mean_std(results.iter().map(f));
    let (auc_roc, auc_roc_std) = stat(|r| r.auc_roc);
    let (f1, f1_std) = stat(|r| r.f1);
    let (precision, precision_std) = stat(|r| r.precision);
    let (recall, recall_std) = stat(|r| r.recall);
    Ok(BenchResult {
        model: spec.kind,
        auc_roc,
        f1,
        precision,
        recall,
        auc_roc_std,
        f1_std,
        precision_std,
        recall_std,
        folds: results,
        seed,
    })
}

/// Cross-validates every spec on the same stratified folds. Specs train in
/// parallel; results come back in spec order.
pub fn run_bench(
    specs: &[ModelSpec],
    features: FeatureSets<'_>,
    labels: &[bool],
    k: usize,
    seed: u64,
) -> Result<Vec<BenchResult>, ScreenError> {
    let check = |x: &[Vec<f64>]| {
        if x.len() != labels.len() {
            Err(ScreenError::Shape(format!("{} feature rows for {} labels", x.len(), labels.len())))
        } else {
            Ok(())
        }
    };
    check(features.symptom)?;
    if let Some(b) = features.bow {
        check(b)?;
    }
    let folds = kfold_split(labels, k, seed)?;
    let mut inputs = Vec::with_capacity(specs.len());
    for spec in specs {
        let x = match spec.kind {
            ModelKind::BowLogregBaseline => features.bow.ok_or(ScreenError::MissingBowFeatures)?,
            _ => features.symptom,
        };
        inputs.push((spec, x));
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = inputs
            .iter()
            .map(|(spec, x)| {
                let folds = &folds;
                scope.spawn(move || bench_one(spec, x, labels, folds, seed))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("bench worker panicked")).collect()
    })
}

/// Bag-of-words logistic baseline under the same protocol.
pub fn bow_baseline(
    corpus: &Corpus,
    patient_ids: &[&str],
    labels: &[bool],
    k: usize,
    seed: u64,
) -> Result<BenchResult, ScreenError> {
    let bow = bow_features(corpus, patient_ids);
    let spec = ModelSpec::new(ModelKind::BowLogregBaseline, seed);
    let empty: Vec<Vec<f64>> = vec![Vec::new(); labels.len()];
    let mut out = run_bench(&[spec], FeatureSets { symptom: &empty, bow: Some(&bow) }, labels, k, seed)?;
    Ok(out.remove(0))
}

/// Replaces each label with a seeded permutation of the labels.
pub fn shuffled_labels(labels: &[bool], seed: u64) -> Vec<bool> {
    let mut out = labels.to_vec();
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    out
}

/// Human-readable results table with fold means and standard deviations.
pub fn render_bench(results: &[BenchResult]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<24}  {:>13}  {:>13}  {:>13}  {:>13}", "Model", "AUC-ROC", "F1", "Precision", "Recall");
    let _ = writeln!(out, "{}", "-".repeat(24 + 4 * 15));
    for r in results {
        let cell = |m: f64, s: f64| format!("{m:.2} ± {s:.2}");
        let _ = writeln!(
            out,
            "{:<24}  {:>13}  {:>13}  {:>13}  {:>13}",
            r.model.display_name(),
            cell(r.auc_roc, r.auc_roc_std),
            cell(r.f1, r.f1_std),
            cell(r.precision, r.precision_std),
            cell(r.recall, r.recall_std)
        );
    }
    out
}

/// Patient labels keyed by id, for joining vectors with external data.
pub fn label_map(corpus: &Corpus) -> HashMap<&str, bool> {
    corpus.patients().iter().map(|p| (p.patient_id.as_str(), p.is_case)).collect()
}

//! Note-level, positive-class scoring of detections against gold labels.
//!
//! Undefined ratios (zero denominators) are `None` and render as `N/A`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::GoldLabel;
use crate::extract::{Detection, DetectionStatus};
use crate::taxonomy::taxonomy;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("duplicate detections for (note, category): {}", fmt_pairs(.0))]
    DuplicateDetection(Vec<(String, String)>),
    #[error("duplicate gold labels for (note, category): {}", fmt_pairs(.0))]
    DuplicateGold(Vec<(String, String)>),
    #[error("gold labels reference unknown categories: {}", .0.join(", "))]
    UnknownCategory(Vec<String>),
}

fn fmt_pairs(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(n, c)| format!("({n}, {c})")).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub category_id: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

impl CategoryScore {
    pub fn from_counts(category_id: impl Into<String>, tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let (precision, recall, f1) = metrics(tp, fp, fn_);
        Self { category_id: category_id.into(), tp, fp, fn_, tn, precision, recall, f1 }
    }
}

/// Precision, recall and F1 with `None` for zero division.
pub fn metrics(tp: usize, fp: usize, fn_: usize) -> (Option<f64>, Option<f64>, Option<f64>) {
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    // harmonic mean of precision and recall, in counts
    let f1 = (tp > 0).then(|| (2 * tp) as f64 / (2 * tp + fp + fn_) as f64);
    (precision, recall, f1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub backend_id: String,
    pub rows: Vec<CategoryScore>,
    pub macro_precision: Option<f64>,
    pub macro_recall: Option<f64>,
    pub macro_f1: Option<f64>,
    pub n_excluded_backend_errors: usize,
    pub n_unparseable: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScoreOptions {
    /// Count undefined metrics as 0 in macro averages instead of skipping.
    pub na_as_zero: bool,
}

pub fn score(gold: &[GoldLabel], detections: &[Detection]) -> Result<EvalReport, EvalError> {
    score_with(gold, detections, ScoreOptions::default())
}

pub fn score_with(
    gold: &[GoldLabel],
    detections: &[Detection],
    options: ScoreOptions,
) -> Result<EvalReport, EvalError> {
    let tax = taxonomy();

    let mut truth: HashMap<(&str, &str), bool> = HashMap::with_capacity(gold.len());
    let mut dup_gold = Vec::new();
    let mut unknown = HashSet::new();
    for g in gold {
        if tax.get(&g.category_id).is_none() {
            unknown.insert(g.category_id.clone());
        }
        if truth.insert((&g.note_id, &g.category_id), g.present).is_some() {
            dup_gold.push((g.note_id.clone(), g.category_id.clone()));
        }
    }
    if !unknown.is_empty() {
        let mut unknown: Vec<_> = unknown.into_iter().collect();
        unknown.sort();
        return Err(EvalError::UnknownCategory(unknown));
    }
    if !dup_gold.is_empty() {
        dup_gold.sort();
        return Err(EvalError::DuplicateGold(dup_gold));
    }

    let mut seen = HashSet::with_capacity(detections.len());
    let mut dup = Vec::new();
    for d in detections {
        if !seen.insert((d.note_id.as_str(), d.category_id.as_str())) {
            dup.push((d.note_id.clone(), d.category_id.clone()));
        }
    }
    if !dup.is_empty() {
        dup.sort();
        dup.dedup();
        return Err(EvalError::DuplicateDetection(dup));
    }

    // per category: [tp, fp, fn, tn]
    let mut counts: BTreeMap<usize, [usize; 4]> = BTreeMap::new();
    for g in gold {
        counts.entry(tax.index_of(&g.category_id).expect("checked above")).or_default();
    }
    let mut excluded = 0;
    let mut unparseable = 0;
    for d in detections {
        if d.status == DetectionStatus::BackendError {
            excluded += 1;
            continue;
        }
        if d.status == DetectionStatus::Unparseable {
            unparseable += 1;
        }
        let Some(&actual) = truth.get(&(d.note_id.as_str(), d.category_id.as_str())) else {
            continue;
        };
        let k = tax.index_of(&d.category_id).expect("gold category is known");
        let cell = match (d.present, actual) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        };
        counts.get_mut(&k).expect("row exists")[cell] += 1;
    }

    let rows: Vec<CategoryScore> = counts
        .into_iter()
        .map(|(k, [tp, fp, fn_, tn])| CategoryScore::from_counts(&tax.categories()[k].category_id, tp, fp, fn_, tn))
        .collect();
    let (macro_precision, macro_recall, macro_f1) = macro_average(&rows, options.na_as_zero);
    let backend_id = detections.first().map(|d| d.backend_id.clone()).unwrap_or_default();
    Ok(EvalReport {
        backend_id,
        rows,
        macro_precision,
        macro_recall,
        macro_f1,
        n_excluded_backend_errors: excluded,
        n_unparseable: unparseable,
    })
}

fn mean_of(values: impl Iterator<Item = Option<f64>>, na_as_zero: bool) -> Option<f64> {
    let defined: Vec<f64> = values.filter_map(|v| if na_as_zero { Some(v.unwrap_or(0.0)) } else { v }).collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Unweighted means over rows; `None` rows are skipped unless `na_as_zero`.
pub fn macro_average(rows: &[CategoryScore], na_as_zero: bool) -> (Option<f64>, Option<f64>, Option<f64>) {
    (
        mean_of(rows.iter().map(|r| r.precision), na_as_zero),
        mean_of(rows.iter().map(|r| r.recall), na_as_zero),
        mean_of(rows.iter().map(|r| r.f1), na_as_zero),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Table,
    Jsonl,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(Self::Table),
            "jsonl" => Ok(Self::Jsonl),
            "markdown" => Ok(Self::Markdown),
            other => Err(format!("unknown format `{other}` (expected table, jsonl or markdown)")),
        }
    }
}

/// Two decimals, or `N/A`.
pub fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "N/A".to_string(), |x| format!("{x:.2}"))
}

fn display_name(category_id: &str) -> &str {
    taxonomy().get(category_id).map_or(category_id, |c| c.display_name.as_str())
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Jsonl => {
            report.rows.iter().map(|r| serde_json::to_string(r).expect("row serializes") + "\n").collect()
        }
        ReportFormat::Table => render_table(report),
        ReportFormat::Markdown => render_markdown(report),
    }
}

const HEADERS: [&str; 8] = ["Category", "TP", "FP", "FN", "TN", "Precision", "Recall", "F1"];

fn cells(report: &EvalReport) -> Vec<[String; 8]> {
    let mut out: Vec<[String; 8]> = report
        .rows
        .iter()
        .map(|r| {
            [
                display_name(&r.category_id).to_string(),
                r.tp.to_string(),
                r.fp.to_string(),
                r.fn_.to_string(),
                r.tn.to_string(),
                fmt_metric(r.precision),
                fmt_metric(r.recall),
                fmt_metric(r.f1),
            ]
        })
        .collect();
    out.push([
        "Average".to_string(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        fmt_metric(report.macro_precision),
        fmt_metric(report.macro_recall),
        fmt_metric(report.macro_f1),
    ]);
    out
}

fn footer(report: &EvalReport, out: &mut String) {
    if report.n_excluded_backend_errors > 0 {
        let _ = writeln!(out, "excluded backend errors: {}", report.n_excluded_backend_errors);
    }
    if report.n_unparseable > 0 {
        let _ = writeln!(out, "unparseable responses (scored negative): {}", report.n_unparseable);
    }
}

fn render_table(report: &EvalReport) -> String {
    let rows = cells(report);
    let mut widths = HEADERS.map(str::len);
    for row in &rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cols: &[String]| -> String {
        let mut s = String::new();
        for (i, (c, w)) in cols.iter().zip(widths).enumerate() {
            if i == 0 {
                let _ = write!(s, "{c:<w$}");
            } else {
                let _ = write!(s, "  {c:>w$}");
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(&HEADERS.map(String::from));
    let rule_len = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    out.push_str(&"-".repeat(rule_len));
    out.push('\n');
    let (body, avg) = rows.split_at(rows.len() - 1);
    for row in body {
        out.push_str(&line(row));
    }
    if !body.is_empty() {
        out.push_str(&"-".repeat(rule_len));
        out.push('\n');
    }
    out.push_str(&line(&avg[0]));
    footer(report, &mut out);
    out
}

fn render_markdown(report: &EvalReport) -> String {
    let mut out = format!("| {} |\n|", HEADERS.join(" | "));
    out.push_str(
        &HEADERS.iter().enumerate().map(|(i, _)| if i == 0 { " --- |" } else { " ---: |" }).collect::<String>(),
    );
    out.push('\n');
    for row in cells(report) {
        let _ = writeln!(out, "| {} |", row.join(" | "));
    }
    footer(report, &mut out);
    out
}

//! Plain and Markdown tables for command output.

use std::fmt::Write;

use serde::Serialize;
use symscreen_core::corpus::CohortTable;
use symscreen_core::screen::BenchResult;
use symscreen_core::taxonomy::Taxonomy;

use crate::Format;

/// Left-aligned first column, right-aligned others.
pub fn table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            let pad = w - cell.chars().count();
            if i == 0 {
                s.push_str(cell);
                s.push_str(&" ".repeat(pad));
            } else {
                s.push_str(&" ".repeat(pad));
                s.push_str(cell);
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(headers.to_vec());
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1)));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

pub fn markdown(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "| {} |", headers.join(" | "));
    let _ = writeln!(
        out,
        "|{}",
        headers.iter().enumerate().map(|(i, _)| if i == 0 { "---|" } else { "---:|" }).collect::<String>()
    );
    for row in rows {
        let _ = writeln!(out, "| {} |", row.iter().map(|c| c.replace('|', "\\|")).collect::<Vec<_>>().join(" | "));
    }
    out
}

pub fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|i| serde_json::to_string(&i).expect("output serializes") + "\n").collect()
}

pub fn tabular(format: Format, headers: &[&str], rows: &[Vec<String>]) -> String {
    match format {
        Format::Markdown => markdown(headers, rows),
        _ => table(headers, rows),
    }
}

/// Key/value summary of a single record.
pub fn summary<T: Serialize>(format: Format, value: &T) -> String {
    if format == Format::Jsonl {
        return jsonl([value]);
    }
    let serde_json::Value::Object(map) = serde_json::to_value(value).expect("summary serializes") else {
        unreachable!("summaries are structs")
    };
    let rows: Vec<Vec<String>> = map
        .into_iter()
        .map(|(k, v)| {
            let v = match v {
                serde_json::Value::String(s) => s,
                other => other.to_string(),
            };
            vec![k, v]
        })
        .collect();
    tabular(format, &["field", "value"], &rows)
}

pub fn cohort(format: Format, t: &CohortTable) -> String {
    if format == Format::Jsonl {
        return jsonl(&t.rows);
    }
    let headers = [
        "Age",
        "Patients",
        "Visits w/ PHQ",
        "Patients w/ PHQ",
        "≥1 PHQ %",
        "≥1 PHQ-9 %",
        "≥1 PHQ-2 %",
        "≥2 PHQ %",
        "≥2 PHQ-9 %",
        "≥2 PHQ-2 %",
    ];
    let pct = |v: f64| format!("{v:.1}");
    let mut rows: Vec<Vec<String>> = t
        .rows
        .iter()
        .map(|r| {
            vec![
                r.age_bin.to_string(),
                r.n_patients.to_string(),
                r.n_visits_with_phq.to_string(),
                r.n_patients_with_phq.to_string(),
                pct(r.pct_at_least_one_phq),
                pct(r.pct_at_least_one_phq9),
                pct(r.pct_at_least_one_phq2),
                pct(r.pct_at_least_two_phq),
                pct(r.pct_at_least_two_phq9),
                pct(r.pct_at_least_two_phq2),
            ]
        })
        .collect();
    if let Some(a) = &t.average {
        rows.push(vec![
            "Average".into(),
            pct(a.n_patients),
            pct(a.n_visits_with_phq),
            pct(a.n_patients_with_phq),
            pct(a.pct_at_least_one_phq),
            pct(a.pct_at_least_one_phq9),
            pct(a.pct_at_least_one_phq2),
            pct(a.pct_at_least_two_phq),
            pct(a.pct_at_least_two_phq9),
            pct(a.pct_at_least_two_phq2),
        ]);
    }
    tabular(format, &headers, &rows)
}

pub fn taxonomy(format: Format, t: &Taxonomy) -> String {
    if format == Format::Jsonl {
        return jsonl(t.categories());
    }
    let rows: Vec<Vec<String>> = t
        .categories()
        .iter()
        .map(|c| {
            vec![
                c.category_id.clone(),
                c.display_name.clone(),
                c.phq_question.to_string(),
                c.direction.to_string(),
                c.bdi_items.iter().map(u8::to_string).collect::<Vec<_>>().join(","),
                c.chat_query.clone(),
            ]
        })
        .collect();
    let headers = ["Category", "Name", "PHQ-9", "Direction", "BDI items", "Chat query"];
    match format {
        Format::Markdown => markdown(&headers, &rows),
        _ => {
            // Text columns read better left-aligned.
            let mut out = String::new();
            let widths: Vec<usize> = (0..headers.len())
                .map(|i| {
                    rows.iter().map(|r| r[i].chars().count()).chain([headers[i].chars().count()]).max().unwrap_or(0)
                })
                .collect();
            let line = |cells: Vec<&str>| {
                let s: Vec<String> = cells
                    .iter()
                    .zip(&widths)
                    .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                    .collect();
                s.join("  ").trim_end().to_string() + "\n"
            };
            out.push_str(&line(headers.to_vec()));
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
            for r in &rows {
                out.push_str(&line(r.iter().map(String::as_str).collect()));
            }
            out
        }
    }
}

pub fn bench(format: Format, results: &[BenchResult]) -> String {
    match format {
        Format::Jsonl => jsonl(results),
        Format::Table => symscreen_core::screen::render_bench(results),
        Format::Markdown => {
            let cell = |m: f64, s: f64| format!("{m:.2} ± {s:.2}");
            let rows: Vec<Vec<String>> = results
                .iter()
                .map(|r| {
                    vec![
                        r.model.display_name().to_string(),
                        cell(r.auc_roc, r.auc_roc_std),
                        cell(r.f1, r.f1_std),
                        cell(r.precision, r.precision_std),
                        cell(r.recall, r.recall_std),
                    ]
                })
                .collect();
            markdown(&["Model", "AUC-ROC", "F1", "Precision", "Recall"], &rows)
        }
    }
}

//! Per-age-bin PHQ completion statistics.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::phq::{parse_phq, PhqKind, PhqParseOptions};
use super::Corpus;

/// What the percentage columns are relative to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denominator {
    /// Patients with at least one PHQ marker in their notes.
    #[default]
    RecordedPhq,
    /// Every patient in the age bin.
    Cohort,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortOptions {
    pub denominator: Denominator,
    pub phq: PhqParseOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortStatsRow {
    pub age_bin: u32,
    pub n_patients: usize,
    pub n_visits_with_phq: usize,
    pub n_patients_with_phq: usize,
    pub pct_at_least_one_phq: f64,
    pub pct_at_least_one_phq9: f64,
    pub pct_at_least_one_phq2: f64,
    pub pct_at_least_two_phq: f64,
    pub pct_at_least_two_phq9: f64,
    pub pct_at_least_two_phq2: f64,
}

/// Column means over the age bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortAverage {
    pub n_patients: f64,
    pub n_visits_with_phq: f64,
    pub n_patients_with_phq: f64,
    pub pct_at_least_one_phq: f64,
    pub pct_at_least_one_phq9: f64,
    pub pct_at_least_one_phq2: f64,
    pub pct_at_least_two_phq: f64,
    pub pct_at_least_two_phq9: f64,
    pub pct_at_least_two_phq2: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CohortTable {
    pub rows: Vec<CohortStatsRow>,
    pub average: Option<CohortAverage>,
}

/// Whole years from `birth` to `on`.
pub fn age_in_years(birth: NaiveDate, on: NaiveDate) -> i32 {
    let mut years = on.year() - birth.year();
    if (on.month(), on.day()) < (birth.month(), birth.day()) {
        years -= 1;
    }
    years
}

#[derive(Default)]
struct PatientCounts {
    any_marker: bool,
    recorded: usize,
    phq9: usize,
    phq2: usize,
}

#[derive(Default)]
struct BinAccumulator {
    n_patients: usize,
    n_visits_with_phq: usize,
    n_patients_with_phq: usize,
    one: [usize; 3],
    two: [usize; 3],
}

/// One row per age bin (age at the patient's last note), plus the average.
/// Patients without notes have no reference date and are skipped.
pub fn cohort_stats(corpus: &Corpus, options: CohortOptions) -> CohortTable {
    let by_patient = corpus.notes_by_patient();
    let mut bins: BTreeMap<u32, BinAccumulator> = BTreeMap::new();

    for patient in corpus.patients() {
        let Some(notes) = by_patient.get(patient.patient_id.as_str()) else {
            continue;
        };
        let last = notes.iter().map(|n| n.date).max().expect("non-empty note list");
        let age = age_in_years(patient.birth_date, last).max(0) as u32;

        let mut counts = PatientCounts::default();
        let mut visits = 0;
        for note in notes {
            let instances = parse_phq(&note.text, options.phq);
            if instances.is_empty() {
                continue;
            }
            visits += 1;
            counts.any_marker = true;
            for inst in instances.iter().filter(|i| i.is_recorded()) {
                counts.recorded += 1;
                match inst.kind {
                    PhqKind::Phq9 => counts.phq9 += 1,
                    PhqKind::Phq2 => counts.phq2 += 1,
                    PhqKind::Partial => {}
                }
            }
        }

        let bin = bins.entry(age).or_default();
        bin.n_patients += 1;
        bin.n_visits_with_phq += visits;
        if counts.any_marker {
            bin.n_patients_with_phq += 1;
        }
        for (k, n) in [counts.recorded, counts.phq9, counts.phq2].into_iter().enumerate() {
            bin.one[k] += usize::from(n >= 1);
            bin.two[k] += usize::from(n >= 2);
        }
    }

    let rows: Vec<CohortStatsRow> = bins
        .into_iter()
        .map(|(age_bin, b)| {
            let denom = match options.denominator {
                Denominator::RecordedPhq => b.n_patients_with_phq,
                Denominator::Cohort => b.n_patients,
            };
            let pct = |n: usize| if denom == 0 { 0.0 } else { 100.0 * n as f64 / denom as f64 };
            CohortStatsRow {
                age_bin,
                n_patients: b.n_patients,
                n_visits_with_phq: b.n_visits_with_phq,
                n_patients_with_phq: b.n_patients_with_phq,
                pct_at_least_one_phq: pct(b.one[0]),
                pct_at_least_one_phq9: pct(b.one[1]),
                pct_at_least_one_phq2: pct(b.one[2]),
                pct_at_least_two_phq: pct(b.two[0]),
                pct_at_least_two_phq9: pct(b.two[1]),
                pct_at_least_two_phq2: pct(b.two[2]),
            }
        })
        .collect();

    let average = (!rows.is_empty()).then(|| {
        let n = rows.len() as f64;
        let mean = |f: fn(&CohortStatsRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        CohortAverage {
            n_patients: mean(|r| r.n_patients as f64),
            n_visits_with_phq: mean(|r| r.n_visits_with_phq as f64),
            n_patients_with_phq: mean(|r| r.n_patients_with_phq as f64),
            pct_at_least_one_phq: mean(|r| r.pct_at_least_one_phq),
            pct_at_least_one_phq9: mean(|r| r.pct_at_least_one_phq9),
            pct_at_least_one_phq2: mean(|r| r.pct_at_least_one_phq2),
            pct_at_least_two_phq: mean(|r| r.pct_at_least_two_phq),
            pct_at_least_two_phq9: mean(|r| r.pct_at_least_two_phq9),
            pct_at_least_two_phq2: mean(|r| r.pct_at_least_two_phq2),
        }
    });

    CohortTable { rows, average }
}

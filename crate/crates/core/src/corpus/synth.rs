//! Seeded synthetic corpus generator with planted, known symptom mentions.
//!
//! Every (note, category) pair is an opportunity: with the group's rate a
//! symptom sentence is planted, realized from a direct, paraphrase or
//! negated surface form. Gold labels record exactly the non-negated plants.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use chrono::{Days, Months, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Corpus, Gender, GoldLabel, Note, Patient, Span};
use crate::taxonomy::taxonomy;

const BUILTIN_TEMPLATES: &str = include_str!("../../data/templates.toml");

/// Distractor slots per note; each is filled with probability `distractor_rate`.
const DISTRACTOR_SLOTS: usize = 8;
/// Pre-diagnosis window that note dates are drawn from.
const NOTE_WINDOW_MONTHS: u32 = 18;
/// Controls are born within this many days of their mirrored case.
const CONTROL_BIRTH_JITTER_DAYS: u64 = 20;

/// Reference counts of flagged notes per category among 3,000 case and
/// 3,000 control notes, with the case share in percent.
const REFERENCE_NOTE_COUNTS: [(&str, f64, f64); 16] = [
    ("not_going_to_school", 91.0, 59.0),
    ("neglecting_activities", 210.0, 60.0),
    ("no_motivation", 68.0, 79.0),
    ("feeling_depressed", 280.0, 86.0),
    ("feeling_anxious", 271.0, 78.0),
    ("feeling_down", 411.0, 83.0),
    ("irritability", 109.0, 67.0),
    ("mental_health_concerns", 433.0, 63.0),
    ("sleep_problems", 396.0, 66.0),
    ("high_appetite", 57.0, 74.0),
    ("low_appetite", 291.0, 68.0),
    ("weight_change", 107.0, 60.0),
    ("little_energy", 271.0, 63.0),
    ("self_loathing", 234.0, 88.0),
    ("abnormal_behavior", 88.0, 65.0),
    ("suicidal_thoughts", 279.0, 85.0),
];
const REFERENCE_NOTES_PER_GROUP: f64 = 3000.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
    #[error("invalid template file: {0}")]
    Templates(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteCount {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_cases: usize,
    pub n_controls: usize,
    pub notes_per_patient: NoteCount,
    /// Per-note planting probability for case patients, by category id.
    /// Missing categories are never planted.
    pub category_rates_case: BTreeMap<String, f64>,
    pub category_rates_control: BTreeMap<String, f64>,
    pub paraphrase_rate: f64,
    pub negation_rate: f64,
    pub distractor_rate: f64,
    /// Probability that a note carries a PHQ total score line. Scores are
    /// drawn from the same distribution for cases and controls.
    #[serde(default)]
    pub phq_rate: f64,
}

impl SynthSpec {
    /// Same rate for every category within each group; nothing else planted.
    pub fn uniform(seed: u64, n_cases: usize, n_controls: usize, case_rate: f64, control_rate: f64) -> Self {
        let all = |rate: f64| taxonomy().ids().map(|id| (id.to_string(), rate)).collect();
        Self {
            seed,
            n_cases,
            n_controls,
            notes_per_patient: NoteCount { min: 3, max: 8 },
            category_rates_case: all(case_rate),
            category_rates_control: all(control_rate),
            paraphrase_rate: 0.0,
            negation_rate: 0.0,
            distractor_rate: 0.0,
            phq_rate: 0.0,
        }
    }

    /// Per-note rates derived from reference screening-cohort counts: each
    /// category's flagged notes split between 3,000 case and 3,000 control
    /// notes (an overall 72% / 28% case/control share).
    pub fn reference_rates(seed: u64, n_cases: usize, n_controls: usize) -> Self {
        let mut case = BTreeMap::new();
        let mut control = BTreeMap::new();
        for (id, n, case_pct) in REFERENCE_NOTE_COUNTS {
            case.insert(id.to_string(), n * case_pct / 100.0 / REFERENCE_NOTES_PER_GROUP);
            control.insert(id.to_string(), n * (100.0 - case_pct) / 100.0 / REFERENCE_NOTES_PER_GROUP);
        }
        Self {
            seed,
            n_cases,
            n_controls,
            // mean of 6.5 notes per patient
            notes_per_patient: NoteCount { min: 4, max: 9 },
            category_rates_case: case,
            category_rates_control: control,
            paraphrase_rate: 0.5,
            negation_rate: 0.1,
            distractor_rate: 0.5,
            phq_rate: 0.2,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.n_cases == 0 || self.n_controls == 0 {
            return bad("n_cases and n_controls must be at least 1".into());
        }
        if self.notes_per_patient.min == 0 || self.notes_per_patient.min > self.notes_per_patient.max {
            return bad("notes_per_patient must satisfy 1 <= min <= max".into());
        }
        let probs = [
            ("paraphrase_rate", self.paraphrase_rate),
            ("negation_rate", self.negation_rate),
            ("distractor_rate", self.distractor_rate),
            ("phq_rate", self.phq_rate),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        for (group, rates) in [("case", &self.category_rates_case), ("control", &self.category_rates_control)] {
            for (id, &p) in rates {
                if taxonomy().get(id).is_none() {
                    return bad(format!("unknown category `{id}` in {group} rates"));
                }
                if !(0.0..=1.0).contains(&p) {
                    return bad(format!("{group} rate for `{id}` = {p} is not a probability"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Direct,
    Paraphrase,
    Negated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryTemplates {
    pub direct: Vec<String>,
    pub paraphrase: Vec<String>,
    pub negated: Vec<String>,
}

impl CategoryTemplates {
    pub fn of_kind(&self, kind: TemplateKind) -> &[String] {
        match kind {
            TemplateKind::Direct => &self.direct,
            TemplateKind::Paraphrase => &self.paraphrase,
            TemplateKind::Negated => &self.negated,
        }
    }
}

/// Surface forms for the generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Templates {
    pub departments: Vec<String>,
    pub headers: Vec<String>,
    pub closings: Vec<String>,
    pub distractors: Vec<String>,
    /// Vitals line with `{sys}`, `{dia}`, `{hr}`, `{temp}` and `{weight}`
    /// placeholders; omitted when empty.
    #[serde(default)]
    pub vitals: String,
    #[serde(default)]
    pub medications: Vec<String>,
    pub categories: BTreeMap<String, CategoryTemplates>,
}

impl Templates {
    pub fn builtin() -> &'static Templates {
        static BUILTIN: OnceLock<Templates> = OnceLock::new();
        BUILTIN.get_or_init(|| Templates::from_toml(BUILTIN_TEMPLATES).expect("built-in templates are valid"))
    }

    pub fn from_toml(source: &str) -> Result<Self, SynthError> {
        let t: Templates = toml::from_str(source).map_err(|e| SynthError::Templates(e.to_string()))?;
        for (name, list) in [
            ("departments", &t.departments),
            ("headers", &t.headers),
            ("closings", &t.closings),
            ("distractors", &t.distractors),
        ] {
            if list.is_empty() {
                return Err(SynthError::Templates(format!("`{name}` must not be empty")));
            }
        }
        for id in taxonomy().ids() {
            let Some(c) = t.categories.get(id) else {
                return Err(SynthError::Templates(format!("no templates for `{id}`")));
            };
            if c.direct.is_empty() || c.paraphrase.is_empty() || c.negated.is_empty() {
                return Err(SynthError::Templates(format!("`{id}` needs every template kind")));
            }
        }
        Ok(t)
    }
}

/// Generates a corpus with complete gold labels using the built-in templates.
pub fn synthesize(spec: &SynthSpec) -> Result<Corpus, SynthError> {
    synthesize_with(spec, Templates::builtin())
}

struct Plant {
    category: usize,
    negated: bool,
    sentence: String,
}

pub fn synthesize_with(spec: &SynthSpec, templates: &Templates) -> Result<Corpus, SynthError> {
    spec.validate()?;
    let tax = taxonomy();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rates = |group: &BTreeMap<String, f64>| -> Vec<f64> {
        tax.ids().map(|id| group.get(id).copied().unwrap_or(0.0)).collect()
    };
    let case_rates = rates(&spec.category_rates_case);
    let control_rates = rates(&spec.category_rates_control);
    let category_templates: Vec<&CategoryTemplates> = tax.ids().map(|id| &templates.categories[id]).collect();

    let earliest_birth = NaiveDate::from_ymd_opt(2003, 1, 1).expect("valid date");
    let mut patients = Vec::with_capacity(spec.n_cases + spec.n_controls);
    // (diagnosis date anchoring the note window) per patient
    let mut anchors = Vec::with_capacity(spec.n_cases + spec.n_controls);

    for i in 0..spec.n_cases {
        let gender = match rng.gen_range(0..100) {
            0..=59 => Gender::F,
            60..=97 => Gender::M,
            _ => Gender::Other,
        };
        let birth = earliest_birth + Days::new(rng.gen_range(0..4 * 365));
        let diagnosis = birth + Days::new(15 * 365 + rng.gen_range(0..3 * 365));
        patients.push(Patient {
            patient_id: patient_id(i),
            birth_date: birth,
            gender,
            is_case: true,
            diagnosis_date: Some(diagnosis),
        });
        anchors.push(diagnosis);
    }
    for j in 0..spec.n_controls {
        let mirror = &patients[j % spec.n_cases];
        let (gender, mirror_birth, anchor) = (mirror.gender, mirror.birth_date, anchors[j % spec.n_cases]);
        let jitter = Days::new(rng.gen_range(0..=CONTROL_BIRTH_JITTER_DAYS));
        let birth = if rng.gen_bool(0.5) { mirror_birth + jitter } else { mirror_birth - jitter };
        patients.push(Patient {
            patient_id: patient_id(spec.n_cases + j),
            birth_date: birth,
            gender,
            is_case: false,
            diagnosis_date: None,
        });
        anchors.push(anchor);
    }

    let mut notes = Vec::new();
    let mut gold = Vec::new();
    for (patient, &anchor) in patients.iter().zip(&anchors) {
        let window_start = anchor.checked_sub_months(Months::new(NOTE_WINDOW_MONTHS)).expect("date in range");
        let window_days = (anchor - window_start).num_days() as u64;
        let rates = if patient.is_case { &case_rates } else { &control_rates };
        let n_notes = rng.gen_range(spec.notes_per_patient.min..=spec.notes_per_patient.max);

        let mut dated: Vec<NaiveDate> =
            (0..n_notes).map(|_| window_start + Days::new(rng.gen_range(0..window_days))).collect();
        dated.sort();

        for date in dated {
            let mut plants = Vec::new();
            for (k, &rate) in rates.iter().enumerate() {
                if rate <= 0.0 || !rng.gen_bool(rate) {
                    continue;
                }
                let kind = if rng.gen_bool(spec.negation_rate) {
                    TemplateKind::Negated
                } else if rng.gen_bool(spec.paraphrase_rate) {
                    TemplateKind::Paraphrase
                } else {
                    TemplateKind::Direct
                };
                let forms = category_templates[k].of_kind(kind);
                plants.push(Plant {
                    category: k,
                    negated: kind == TemplateKind::Negated,
                    sentence: forms[rng.gen_range(0..forms.len())].clone(),
                });
            }

            // body entries: Some(plant index) or None for filler text
            let mut body: Vec<(Option<usize>, String)> = (0..plants.len()).map(|i| (Some(i), String::new())).collect();
            for _ in 0..DISTRACTOR_SLOTS {
                if rng.gen_bool(spec.distractor_rate) {
                    body.push((None, pick(&mut rng, &templates.distractors).clone()));
                }
            }
            if !templates.vitals.is_empty() {
                body.push((None, vitals_line(&mut rng, &templates.vitals)));
            }
            if !templates.medications.is_empty() {
                let n = rng.gen_range(0..=3usize.min(templates.medications.len()));
                let meds: Vec<&str> = templates.medications.choose_multiple(&mut rng, n).map(String::as_str).collect();
                if !meds.is_empty() {
                    body.push((None, format!("Current medications: {}.", meds.join(", "))));
                }
            }
            if rng.gen_bool(spec.phq_rate) {
                body.push((None, format!("PHQ-9 Total Score: {}", rng.gen_range(0..=27))));
            }
            body.shuffle(&mut rng);

            let mut text = pick(&mut rng, &templates.headers).clone();
            let mut spans = vec![None; plants.len()];
            for (slot, filler) in &body {
                text.push(' ');
                let start = text.len();
                match slot {
                    Some(i) => text.push_str(&plants[*i].sentence),
                    None => text.push_str(filler),
                }
                if let Some(i) = slot {
                    spans[*i] = Some(Span::new(start, text.len()));
                }
            }
            text.push(' ');
            text.push_str(pick(&mut rng, &templates.closings));

            let note_id = format!("N{:06}", notes.len() + 1);
            let mut positive = vec![None; tax.len()];
            for (plant, span) in plants.iter().zip(spans) {
                if !plant.negated {
                    positive[plant.category] = span;
                }
            }
            for (k, category) in tax.categories().iter().enumerate() {
                gold.push(GoldLabel {
                    note_id: note_id.clone(),
                    category_id: category.category_id.clone(),
                    present: positive[k].is_some(),
                    evidence: positive[k].into_iter().collect(),
                });
            }
            notes.push(Note {
                note_id,
                patient_id: patient.patient_id.clone(),
                date,
                department: pick(&mut rng, &templates.departments).clone(),
                text,
            });
        }
    }

    Ok(Corpus::new(patients, notes, gold).expect("generator output is referentially consistent"))
}

fn vitals_line(rng: &mut ChaCha8Rng, template: &str) -> String {
    template
        .replace("{sys}", &rng.gen_range(95..=135).to_string())
        .replace("{dia}", &rng.gen_range(55..=88).to_string())
        .replace("{hr}", &rng.gen_range(58..=110).to_string())
        .replace("{temp}", &format!("{:.1}", rng.gen_range(97.0..99.6)))
        .replace("{weight}", &format!("{:.1}", rng.gen_range(38.0..95.0)))
}

fn patient_id(i: usize) -> String {
    format!("P{:05}", i + 1)
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    &items[rng.gen_range(0..items.len())]
}

//! Greedy case-control matching.

use std::collections::{HashMap, HashSet};

use chrono::{Months, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Note, Patient};

/// Length of the pre-diagnosis visit window, anchored at the case's diagnosis.
pub const WINDOW_MONTHS: u32 = 18;
/// Maximum absolute difference in birth dates.
pub const BIRTH_GAP_DAYS: i64 = 30;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MatchError {
    #[error("pool patient `{0}` is a case")]
    CaseInPool(String),
    #[error("case `{0}` has no diagnosis date")]
    MissingDiagnosis(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub case_id: String,
    pub control_id: String,
    pub birth_gap_days: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub pairs: Vec<MatchedPair>,
    pub unmatched: Vec<String>,
}

/// Half-open `[start, diagnosis)` window for a diagnosis date.
pub fn visit_window(diagnosis: NaiveDate) -> (NaiveDate, NaiveDate) {
    let start = diagnosis.checked_sub_months(Months::new(WINDOW_MONTHS)).unwrap_or(NaiveDate::MIN);
    (start, diagnosis)
}

/// Cases are processed by ascending diagnosis date (then id); each takes the
/// eligible unused control with the smallest birth gap, then smallest id.
pub fn match_controls(cases: &[Patient], pool: &[Patient], notes: &[Note]) -> Result<MatchOutcome, MatchError> {
    if let Some(p) = pool.iter().find(|p| p.is_case) {
        return Err(MatchError::CaseInPool(p.patient_id.clone()));
    }
    let mut ordered = Vec::with_capacity(cases.len());
    for case in cases {
        let dx = case.diagnosis_date.ok_or_else(|| MatchError::MissingDiagnosis(case.patient_id.clone()))?;
        ordered.push((dx, case));
    }
    ordered.sort_by(|a, b| (a.0, &a.1.patient_id).cmp(&(b.0, &b.1.patient_id)));

    let mut visits: HashMap<&str, Vec<NaiveDate>> = HashMap::new();
    for note in notes {
        visits.entry(note.patient_id.as_str()).or_default().push(note.date);
    }
    for dates in visits.values_mut() {
        dates.sort_unstable();
    }

    let mut used: HashSet<&str> = HashSet::new();
    let mut outcome = MatchOutcome::default();
    for (dx, case) in ordered {
        let (start, end) = visit_window(dx);
        let best = pool
            .iter()
            .filter(|c| !used.contains(c.patient_id.as_str()))
            .filter(|c| c.gender == case.gender)
            .filter(|c| c.diagnosis_date.is_none_or(|d| d > dx))
            .filter_map(|c| {
                let gap = (c.birth_date - case.birth_date).num_days().abs();
                (gap <= BIRTH_GAP_DAYS).then_some((gap, c))
            })
            .filter(|(_, c)| {
                visits.get(c.patient_id.as_str()).is_some_and(|dates| {
                    let i = dates.partition_point(|d| *d < start);
                    dates.get(i).is_some_and(|d| *d < end)
                })
            })
            .min_by(|a, b| (a.0, &a.1.patient_id).cmp(&(b.0, &b.1.patient_id)));
        match best {
            Some((gap, control)) => {
                used.insert(control.patient_id.as_str());
                outcome.pairs.push(MatchedPair {
                    case_id: case.patient_id.clone(),
                    control_id: control.patient_id.clone(),
                    birth_gap_days: gap,
                });
            }
            None => outcome.unmatched.push(case.patient_id.clone()),
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Gender;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn case(id: &str, birth: &str, dx: &str) -> Patient {
        Patient {
            patient_id: id.into(),
            birth_date: d(birth),
            gender: Gender::F,
            is_case: true,
            diagnosis_date: Some(d(dx)),
        }
    }

    fn control(id: &str, birth: &str) -> Patient {
        Patient { patient_id: id.into(), birth_date: d(birth), gender: Gender::F, is_case: false, diagnosis_date: None }
    }

    fn visit(pid: &str, date: &str) -> Note {
        Note {
            note_id: format!("{pid}-{date}"),
            patient_id: pid.into(),
            date: d(date),
            department: "Primary Care".into(),
            text: "Visit.".into(),
        }
    }

    #[test]
    fn simple_match() {
        let out = match_controls(
            &[case("c1", "2006-01-01", "2021-06-01")],
            &[control("k1", "2006-01-20")],
            &[visit("k1", "2021-01-15")],
        )
        .unwrap();
        assert_eq!(out.pairs.len(), 1);
        assert_eq!(out.pairs[0].control_id, "k1");
        assert_eq!(out.pairs[0].birth_gap_days, 19);
    }

    #[test]
    fn birth_gap_limit() {
        let out = match_controls(
            &[case("c1", "2006-01-01", "2021-06-01")],
            &[control("k1", "2006-02-15")],
            &[visit("k1", "2021-01-15")],
        )
        .unwrap();
        assert!(out.pairs.is_empty());
        assert_eq!(out.unmatched, vec!["c1"]);
    }

    #[test]
    fn earlier_diagnosis_wins_the_only_control() {
        let cases = [case("late", "2006-01-05", "2021-09-01"), case("early", "2006-01-10", "2021-06-01")];
        let out = match_controls(&cases, &[control("k1", "2006-01-01")], &[visit("k1", "2021-03-01")]).unwrap();
        assert_eq!(out.pairs[0].case_id, "early");
        assert_eq!(out.unmatched, vec!["late"]);
    }

    #[test]
    fn window_and_diagnosis_predicates() {
        let c = case("c1", "2006-01-01", "2021-06-01");
        // visit on the diagnosis date itself is outside the half-open window
        let on_dx =
            match_controls(std::slice::from_ref(&c), &[control("k1", "2006-01-01")], &[visit("k1", "2021-06-01")]);
        assert!(on_dx.unwrap().pairs.is_empty());
        let too_early =
            match_controls(std::slice::from_ref(&c), &[control("k1", "2006-01-01")], &[visit("k1", "2019-11-30")]);
        assert!(too_early.unwrap().pairs.is_empty());
        let first_day =
            match_controls(std::slice::from_ref(&c), &[control("k1", "2006-01-01")], &[visit("k1", "2019-12-01")]);
        assert_eq!(first_day.unwrap().pairs.len(), 1);

        let mut diagnosed = control("k1", "2006-01-01");
        diagnosed.diagnosis_date = Some(d("2021-06-01"));
        let out = match_controls(std::slice::from_ref(&c), &[diagnosed.clone()], &[visit("k1", "2021-01-01")]).unwrap();
        assert!(out.pairs.is_empty());
        diagnosed.diagnosis_date = Some(d("2021-06-02"));
        let out = match_controls(&[c], &[diagnosed], &[visit("k1", "2021-01-01")]).unwrap();
        assert_eq!(out.pairs.len(), 1);
    }

    #[test]
    fn ties_break_by_gap_then_id() {
        let c = case("c1", "2006-01-10", "2021-06-01");
        let pool = [control("kb", "2006-01-05"), control("ka", "2006-01-15"), control("kc", "2006-01-11")];
        let notes: Vec<Note> = ["ka", "kb", "kc"].iter().map(|p| visit(p, "2021-01-01")).collect();
        let out = match_controls(std::slice::from_ref(&c), &pool, &notes).unwrap();
        assert_eq!(out.pairs[0].control_id, "kc");
        let out = match_controls(&[c], &pool[..2], &notes).unwrap();
        assert_eq!(out.pairs[0].control_id, "ka");
    }

    #[test]
    fn rejects_bad_inputs() {
        let c = case("c1", "2006-01-01", "2021-06-01");
        assert_eq!(
            match_controls(std::slice::from_ref(&c), std::slice::from_ref(&c), &[]),
            Err(MatchError::CaseInPool("c1".into()))
        );
        let mut no_dx = c;
        no_dx.diagnosis_date = None;
        assert!(matches!(match_controls(&[no_dx], &[], &[]), Err(MatchError::MissingDiagnosis(_))));
    }
}

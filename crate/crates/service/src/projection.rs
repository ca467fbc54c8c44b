//! Gold labels derived from adjudications.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use symscreen_core::{Detection, GoldLabel};

use crate::model::{Adjudication, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewerVerdict {
    pub reviewer: String,
    pub adjudication_id: String,
    pub verdict: Verdict,
    pub present: bool,
}

/// A pair whose reviewers' live adjudications imply different gold labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conflict {
    pub note_id: String,
    pub category_id: String,
    pub reviewers: Vec<ReviewerVerdict>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Projection {
    pub gold: Vec<GoldLabel>,
    pub conflicts: Vec<Conflict>,
}

/// The gold label one adjudication implies for its detection.
pub fn implied_label(adj: &Adjudication, detection: Option<&Detection>) -> GoldLabel {
    let (present, mut evidence) = match adj.verdict {
        Verdict::Accept => {
            let d = detection;
            let present = d.is_some_and(|d| d.present);
            let spans = if present {
                d.map(|d| d.evidence.iter().filter_map(|e| e.span()).collect()).unwrap_or_default()
            } else {
                Vec::new()
            };
            (present, spans)
        }
        Verdict::Reject => (!detection.is_some_and(|d| d.present), Vec::new()),
        Verdict::Modify => (true, adj.corrected_evidence.clone().unwrap_or_default()),
    };
    evidence.sort();
    evidence.dedup();
    GoldLabel { note_id: adj.note_id.clone(), category_id: adj.category_id.clone(), present, evidence }
}

/// Projects one run's adjudications (in log order) over its detections.
///
/// Each reviewer's latest adjudication of a pair is live. When several
/// reviewers have live adjudications, the most recent one sets the label and
/// disagreements are reported as conflicts. Unadjudicated pairs are omitted.
/// Output is sorted by (note_id, category_id).
/// Each reviewer's latest adjudication, with its log position.
type LiveByReviewer<'a> = HashMap<String, (usize, &'a Adjudication)>;

pub fn project_gold<'a>(
    adjudications: impl IntoIterator<Item = &'a Adjudication>,
    detections: &[Detection],
) -> Projection {
    let det: HashMap<(&str, &str), &Detection> =
        detections.iter().map(|d| ((d.note_id.as_str(), d.category_id.as_str()), d)).collect();
    // pair -> reviewer -> (log position, adjudication)
    let mut live: BTreeMap<(String, String), LiveByReviewer> = BTreeMap::new();
    for (pos, adj) in adjudications.into_iter().enumerate() {
        live.entry((adj.note_id.clone(), adj.category_id.clone()))
            .or_default()
            .insert(adj.reviewer.clone(), (pos, adj));
    }

    let mut out = Projection::default();
    for ((note_id, category_id), by_reviewer) in live {
        let detection = det.get(&(note_id.as_str(), category_id.as_str())).copied();
        let mut entries: Vec<(usize, &Adjudication, GoldLabel)> =
            by_reviewer.into_values().map(|(pos, a)| (pos, a, implied_label(a, detection))).collect();
        entries.sort_by_key(|(pos, _, _)| *pos);
        let winner = entries.last().expect("at least one adjudication").2.clone();
        if entries.iter().any(|(_, _, g)| *g != winner) {
            let mut reviewers: Vec<ReviewerVerdict> = entries
                .iter()
                .map(|(_, a, g)| ReviewerVerdict {
                    reviewer: a.reviewer.clone(),
                    adjudication_id: a.adjudication_id.clone(),
                    verdict: a.verdict,
                    present: g.present,
                })
                .collect();
            reviewers.sort_by(|a, b| a.reviewer.cmp(&b.reviewer));
            out.conflicts.push(Conflict { note_id, category_id, reviewers });
        }
        out.gold.push(winner);
    }
    out
}

/// Overlays projected labels on existing gold for the same notes.
pub fn merge_gold(existing: &[GoldLabel], projected: &[GoldLabel]) -> Vec<GoldLabel> {
    let mut merged: BTreeMap<(String, String), GoldLabel> =
        existing.iter().map(|g| ((g.note_id.clone(), g.category_id.clone()), g.clone())).collect();
    for g in projected {
        merged.insert((g.note_id.clone(), g.category_id.clone()), g.clone());
    }
    merged.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};
    use symscreen_core::extract::Evidence;
    use symscreen_core::{DetectionStatus, Span};

    fn detection(note: &str, present: bool) -> Detection {
        Detection {
            note_id: note.into(),
            category_id: "sleep_problems".into(),
            present,
            evidence: if present {
                vec![Evidence { start: Some(0), end: Some(4), quote: "Poor".into() }]
            } else {
                vec![]
            },
            backend_id: "b".into(),
            status: DetectionStatus::Ok,
            raw_response: None,
        }
    }

    fn adj(id: u32, note: &str, reviewer: &str, verdict: Verdict, spans: Option<Vec<Span>>) -> Adjudication {
        Adjudication {
            adjudication_id: format!("A{id}"),
            run_id: "R1".into(),
            note_id: note.into(),
            category_id: "sleep_problems".into(),
            verdict,
            corrected_evidence: spans,
            reviewer: reviewer.into(),
            timestamp: Utc.timestamp_opt(1_700_000_000 + i64::from(id), 0).unwrap(),
            idempotency_key: None,
        }
    }

    #[test]
    fn verdicts_map_to_labels() {
        let dets = [detection("N1", true), detection("N2", true), detection("N3", false)];
        let adjs = [
            adj(1, "N1", "a", Verdict::Accept, None),
            adj(2, "N2", "a", Verdict::Reject, None),
            adj(3, "N3", "a", Verdict::Modify, Some(vec![Span::new(5, 9)])),
        ];
        let p = project_gold(&adjs, &dets);
        let got: Vec<(bool, Vec<Span>)> = p.gold.iter().map(|g| (g.present, g.evidence.clone())).collect();
        assert_eq!(got, [(true, vec![Span::new(0, 4)]), (false, vec![]), (true, vec![Span::new(5, 9)])]);
        assert!(p.conflicts.is_empty());
    }

    #[test]
    fn rejecting_a_negative_makes_it_positive() {
        let p = project_gold(&[adj(1, "N1", "a", Verdict::Reject, None)], &[detection("N1", false)]);
        assert!(p.gold[0].present);
    }

    #[test]
    fn later_adjudication_supersedes() {
        let adjs = [adj(1, "N1", "a", Verdict::Accept, None), adj(2, "N1", "a", Verdict::Reject, None)];
        let p = project_gold(&adjs, &[detection("N1", true)]);
        assert_eq!(p.gold.len(), 1);
        assert!(!p.gold[0].present);
        assert!(p.conflicts.is_empty());
    }

    #[test]
    fn reviewer_disagreement_is_surfaced() {
        let adjs = [adj(1, "N1", "a", Verdict::Accept, None), adj(2, "N1", "b", Verdict::Reject, None)];
        let p = project_gold(&adjs, &[detection("N1", true)]);
        assert!(!p.gold[0].present);
        assert_eq!(p.conflicts.len(), 1);
        assert_eq!(p.conflicts[0].reviewers.len(), 2);
    }

    #[test]
    fn merge_prefers_adjudications() {
        let base = vec![
            GoldLabel { note_id: "N1".into(), category_id: "c".into(), present: true, evidence: vec![] },
            GoldLabel { note_id: "N2".into(), category_id: "c".into(), present: true, evidence: vec![] },
        ];
        let proj = vec![GoldLabel { note_id: "N2".into(), category_id: "c".into(), present: false, evidence: vec![] }];
        let merged = merge_gold(&base, &proj);
        assert_eq!(merged.iter().map(|g| g.present).collect::<Vec<_>>(), [true, false]);
    }
}

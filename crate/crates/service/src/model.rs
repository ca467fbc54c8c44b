//! Records exchanged over the API and persisted in the logs.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use symscreen_core::Span;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Pending,
    Running,
    Done,
    Failed,
}

impl RunState {
    /// Allowed moves: pending to running, running to done or failed.
    /// Pending runs may also fail when they cannot start at all.
    pub fn can_move_to(self, next: RunState) -> bool {
        matches!(
            (self, next),
            (RunState::Pending, RunState::Running)
                | (RunState::Pending, RunState::Failed)
                | (RunState::Running, RunState::Done)
                | (RunState::Running, RunState::Failed)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, RunState::Done | RunState::Failed)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub done_pairs: usize,
    pub total_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Run {
    pub run_id: String,
    pub backend_id: String,
    pub corpus_ref: String,
    pub state: RunState,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub finished_at: Option<DateTime<Utc>>,
    pub progress: Progress,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject,
    Modify,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjudicationRequest {
    pub run_id: String,
    pub note_id: String,
    pub category_id: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub corrected_evidence: Option<Vec<Span>>,
    pub reviewer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adjudication {
    pub adjudication_id: String,
    pub run_id: String,
    pub note_id: String,
    pub category_id: String,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected_evidence: Option<Vec<Span>>,
    pub reviewer: String,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
}

impl Adjudication {
    pub fn matches(&self, req: &AdjudicationRequest) -> bool {
        self.run_id == req.run_id
            && self.note_id == req.note_id
            && self.category_id == req.category_id
            && self.verdict == req.verdict
            && self.corrected_evidence == req.corrected_evidence
            && self.reviewer == req.reviewer
    }
}

/// One line of `runs.log`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum RunEvent {
    Created {
        run: Run,
    },
    Started {
        run_id: String,
        total_pairs: usize,
    },
    Finished {
        run_id: String,
        state: RunState,
        at: DateTime<Utc>,
        progress: Progress,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    /// Folded state written by compaction.
    Snapshot {
        run: Run,
    },
}

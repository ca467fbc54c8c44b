//! Mining PHQ questionnaire results out of free note text.
//!
//! Grammar: the case-sensitive marker `PHQ-9 Total Score:`, optional spaces
//! or tabs, then one or two digits (0..=27). An `Items Answered: k` field on
//! the same or the following line gives the completion count.

use serde::{Deserialize, Serialize};

pub const PHQ_MARKER: &str = "PHQ-9 Total Score:";
const ITEMS_MARKER: &str = "Items Answered:";
/// The integer must begin within this many characters after the marker.
const SCORE_WINDOW: usize = 16;
const MAX_TOTAL: u8 = 27;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhqKind {
    #[serde(rename = "PHQ2")]
    Phq2,
    #[serde(rename = "PHQ9")]
    Phq9,
    #[serde(rename = "partial")]
    Partial,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhqInstance {
    pub total_score: Option<u8>,
    pub items_answered: u8,
    pub kind: PhqKind,
    /// The marker was found but no valid score followed it.
    pub malformed: bool,
}

impl PhqInstance {
    /// A properly recorded questionnaire carries a score.
    pub fn is_recorded(&self) -> bool {
        self.total_score.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhqParseOptions {
    /// Treat a score without an `Items Answered` field as a full PHQ-9.
    pub assume_full: bool,
}

impl Default for PhqParseOptions {
    fn default() -> Self {
        Self { assume_full: true }
    }
}

/// One instance per marker occurrence, in document order.
pub fn parse_phq(text: &str, options: PhqParseOptions) -> Vec<PhqInstance> {
    let starts: Vec<usize> = text.match_indices(PHQ_MARKER).map(|(i, _)| i).collect();
    starts
        .iter()
        .enumerate()
        .map(|(k, &start)| {
            let after = start + PHQ_MARKER.len();
            let region_end = starts.get(k + 1).copied().unwrap_or(text.len());
            parse_one(&text[after..region_end], options)
        })
        .collect()
}

fn parse_one(rest: &str, options: PhqParseOptions) -> PhqInstance {
    let (score, consumed) = read_score(rest);
    let items = read_items(&rest[consumed..]);
    let (kind, items_answered) = match items {
        Some(9) => (PhqKind::Phq9, 9),
        Some(k) if k >= 2 => (PhqKind::Phq2, k),
        Some(k) => (PhqKind::Partial, k),
        None if score.is_some() && options.assume_full => (PhqKind::Phq9, 9),
        None => (PhqKind::Partial, 0),
    };
    PhqInstance { total_score: score, items_answered, kind, malformed: score.is_none() }
}

/// Returns the score and the number of bytes consumed from `rest`.
fn read_score(rest: &str) -> (Option<u8>, usize) {
    let mut offset = 0;
    for (n, c) in rest.chars().enumerate() {
        if n >= SCORE_WINDOW || !(c == ' ' || c == '\t') {
            break;
        }
        offset += c.len_utf8();
    }
    let digits: &str = {
        let tail = &rest[offset..];
        let len = tail.bytes().take_while(u8::is_ascii_digit).count();
        &tail[..len]
    };
    if digits.is_empty() || digits.len() > 2 {
        return (None, 0);
    }
    match digits.parse::<u8>() {
        Ok(v) if v <= MAX_TOTAL => (Some(v), offset + digits.len()),
        _ => (None, 0),
    }
}

/// Looks for `Items Answered: k` on the remainder of this line or the next.
fn read_items(rest: &str) -> Option<u8> {
    let limit = match rest.find('\n') {
        Some(first) => rest[first + 1..].find('\n').map_or(rest.len(), |second| first + 1 + second),
        None => rest.len(),
    };
    let region = &rest[..limit];
    let at = region.find(ITEMS_MARKER)? + ITEMS_MARKER.len();
    let tail = region[at..].trim_start_matches([' ', '\t']);
    let len = tail.bytes().take_while(u8::is_ascii_digit).count();
    match tail[..len].parse::<u8>() {
        Ok(k) if k <= 9 && len > 0 => Some(k),
        _ => None,
    }
}

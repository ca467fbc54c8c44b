//! Prompt construction and input truncation.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::ExtractError;
use crate::taxonomy::SymptomCategory;

pub const SYSTEM_PROMPT: &str = "You are a medical AI assistant.";
/// Chat backends always see this many in-context exemplars.
pub const SHOT_COUNT: usize = 3;
/// How far back from the limit a truncation may move to land on whitespace.
pub const WHITESPACE_BACKOFF: usize = 200;

const BUILTIN_SHOTS: &str = include_str!("../../data/shots.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatPrompt {
    pub messages: Vec<ChatMessage>,
}

/// An in-context exemplar. `quote` is `None` for negative shots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shot {
    pub note: String,
    pub quote: Option<String>,
}

impl Shot {
    pub fn negative(note: impl Into<String>) -> Self {
        Self { note: note.into(), quote: None }
    }

    pub fn positive(note: impl Into<String>, quote: impl Into<String>) -> Self {
        Self { note: note.into(), quote: Some(quote.into()) }
    }

    fn answer(&self) -> String {
        match &self.quote {
            Some(q) => format!("Yes: '{q}'"),
            None => "No.".to_string(),
        }
    }
}

#[derive(Debug, Deserialize)]
struct ShotFile {
    negative_first: String,
    negative_last: String,
    positive: BTreeMap<String, PositiveShot>,
}

#[derive(Debug, Deserialize)]
struct PositiveShot {
    note: String,
    quote: String,
}

fn shot_file() -> &'static ShotFile {
    static SHOTS: OnceLock<ShotFile> = OnceLock::new();
    SHOTS.get_or_init(|| toml::from_str(BUILTIN_SHOTS).expect("built-in shots are valid"))
}

/// The three built-in exemplars for a category: negative, positive, negative.
pub fn canonical_shots(category_id: &str) -> Result<Vec<Shot>, ExtractError> {
    let file = shot_file();
    let pos = file
        .positive
        .get(category_id)
        .ok_or_else(|| ExtractError::Config(format!("no exemplars for category `{category_id}`")))?;
    Ok(vec![
        Shot::negative(&file.negative_first),
        Shot::positive(&pos.note, &pos.quote),
        Shot::negative(&file.negative_last),
    ])
}

fn user_turn(note: &str, query: &str) -> String {
    format!("Here is an EHR note: '{note}' {query}")
}

pub fn build_chat_prompt(
    category: &SymptomCategory,
    note_text: &str,
    shots: &[Shot],
) -> Result<ChatPrompt, ExtractError> {
    if shots.len() != SHOT_COUNT {
        return Err(ExtractError::ShotCount { expected: SHOT_COUNT, got: shots.len() });
    }
    let msg = |role, content: String| ChatMessage { role, content };
    let mut messages = vec![msg(Role::System, SYSTEM_PROMPT.to_string())];
    for shot in shots {
        messages.push(msg(Role::User, user_turn(&shot.note, &category.chat_query)));
        messages.push(msg(Role::Assistant, shot.answer()));
    }
    messages.push(msg(Role::User, user_turn(note_text, &category.chat_query)));
    Ok(ChatPrompt { messages })
}

/// The note's own closing period is folded into the template's.
pub fn build_entailment_prompt(category: &SymptomCategory, note_text: &str) -> String {
    let note_text = note_text.trim_end();
    let note_text = note_text.strip_suffix('.').unwrap_or(note_text);
    format!(
        "Premise: This is an EHR note: {note_text}. Hypothesis: {} Does the premise entail the hypothesis?",
        category.hypothesis
    )
}

/// Cuts `text` to at most `char_limit` Unicode scalar values, preferring to
/// end at whitespace within [`WHITESPACE_BACKOFF`] characters of the limit.
pub fn truncate(text: &str, char_limit: usize) -> (&str, bool) {
    assert!(char_limit >= 1, "char_limit must be positive");
    let cut = match text.char_indices().nth(char_limit) {
        None => return (text, false),
        Some((byte, _)) => byte,
    };
    let head = &text[..cut];
    let floor = char_limit.saturating_sub(WHITESPACE_BACKOFF);
    let boundary = if text[cut..].starts_with(char::is_whitespace) {
        Some(cut)
    } else {
        head.char_indices().rev().take(char_limit - floor).find(|(_, c)| c.is_whitespace()).map(|(i, _)| i)
    };
    match boundary {
        Some(b) if !head[..b].trim_end().is_empty() => (head[..b].trim_end(), true),
        _ => (head, true),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::taxonomy;

    #[test]
    fn truncation_boundaries() {
        let short = "a".repeat(5000);
        assert_eq!(truncate(&short, 6000), (short.as_str(), false));
        let exact = "b".repeat(6000);
        assert_eq!(truncate(&exact, 6000), (exact.as_str(), false));
        let long = "word ".repeat(1400);
        let (cut, was) = truncate(&long, 6000);
        assert!(was);
        assert!(cut.chars().count() <= 6000);
        assert!(cut.ends_with("word"));
    }

    #[test]
    fn truncation_without_whitespace_cuts_hard() {
        let text = "x".repeat(7000);
        let (cut, was) = truncate(&text, 6000);
        assert!(was);
        assert_eq!(cut.chars().count(), 6000);
        // whitespace too far back is ignored
        let text = format!("a {}", "y".repeat(7000));
        assert_eq!(truncate(&text, 6000).0.chars().count(), 6000);
    }

    #[test]
    fn truncation_counts_scalar_values() {
        let text = "é".repeat(10);
        let (cut, was) = truncate(&text, 4);
        assert!(was);
        assert_eq!(cut, "éééé");
    }

    #[test]
    fn shot_count_enforced() {
        let cat = &taxonomy().categories()[0];
        let shots = canonical_shots(&cat.category_id).unwrap();
        assert!(matches!(
            build_chat_prompt(cat, "x", &shots[..2]),
            Err(ExtractError::ShotCount { expected: 3, got: 2 })
        ));
        let prompt = build_chat_prompt(cat, "x", &shots).unwrap();
        assert_eq!(prompt.messages.len(), 8);
    }

    #[test]
    fn role_alternation() {
        for cat in taxonomy().categories() {
            let shots = canonical_shots(&cat.category_id).unwrap();
            let p = build_chat_prompt(cat, "Note.", &shots).unwrap();
            assert_eq!(p.messages[0].role, Role::System);
            for (i, m) in p.messages.iter().enumerate().skip(1) {
                let expected = if i % 2 == 1 { Role::User } else { Role::Assistant };
                assert_eq!(m.role, expected);
            }
            assert!(p.messages.last().unwrap().content.ends_with(&cat.chat_query));
        }
    }

    #[test]
    fn positive_shot_quotes_appear_in_shot_notes() {
        for id in taxonomy().ids() {
            let shot = &canonical_shots(id).unwrap()[1];
            assert!(shot.note.contains(shot.quote.as_deref().unwrap()), "{id}");
        }
    }

    #[test]
    fn entailment_with_empty_note() {
        let cat = taxonomy().get("no_motivation").unwrap();
        let p = build_entailment_prompt(cat, "");
        assert!(p.starts_with("Premise: This is an EHR note: . Hypothesis: "));
        assert!(p.ends_with("Does the premise entail the hypothesis?"));
    }
}

//! Rigid word-match baseline.

use std::collections::HashSet;

use crate::corpus::Span;
use crate::taxonomy::SymptomCategory;
use crate::text::{sentences, word_set};

/// Note-level verdict: some keyword set has all of its words present as
/// whole words anywhere in the note, ignoring case. Evidence is the first
/// sentence holding a complete set, else the first holding any of its words.
pub fn keyword_match(category: &SymptomCategory, text: &str) -> Option<Span> {
    let note_words = word_set(text);
    let matched: Vec<&Vec<String>> =
        category.keywords.iter().filter(|set| set.iter().all(|w| note_words.contains(w))).collect();
    if matched.is_empty() {
        return None;
    }
    let spans = sentences(text);
    let sentence_words: Vec<HashSet<String>> = spans.iter().map(|r| word_set(&text[r.clone()])).collect();
    let full =
        spans.iter().zip(&sentence_words).find(|(_, ws)| matched.iter().any(|set| set.iter().all(|w| ws.contains(w))));
    let partial = || {
        spans.iter().zip(&sentence_words).find(|(_, ws)| matched.iter().flat_map(|s| s.iter()).any(|w| ws.contains(w)))
    };
    let (range, _) = full.or_else(partial).expect("matched words occur in some sentence");
    Some(Span::new(range.start, range.end))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::taxonomy;

    fn cat(id: &str) -> &'static SymptomCategory {
        taxonomy().get(id).unwrap()
    }

    #[test]
    fn rigid_match_fires_on_unrelated_sentence() {
        let text = "He is going to a new school.";
        assert_eq!(keyword_match(cat("not_going_to_school"), text), Some(Span::new(0, text.len())));
    }

    #[test]
    fn paraphrase_is_missed() {
        assert_eq!(keyword_match(cat("not_going_to_school"), "She has not attended classes since May."), None);
    }

    #[test]
    fn whole_words_only_and_case_insensitive() {
        assert_eq!(keyword_match(cat("feeling_depressed"), "Sadness noted."), None);
        assert!(keyword_match(cat("feeling_depressed"), "Very SAD today.").is_some());
    }

    #[test]
    fn words_spread_over_sentences() {
        let text = "Plans on going camping. School starts soon.";
        let span = keyword_match(cat("not_going_to_school"), text).unwrap();
        assert_eq!(span.slice(text), Some("Plans on going camping."));
    }

    #[test]
    fn evidence_prefers_a_sentence_with_the_whole_set() {
        let text = "School is fine. He is not going to school anymore.";
        let span = keyword_match(cat("not_going_to_school"), text).unwrap();
        assert_eq!(span.slice(text), Some("He is not going to school anymore."));
    }
}

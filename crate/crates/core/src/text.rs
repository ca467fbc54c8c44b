//! Small text utilities shared by the extractors and the generator.
//!
//! All spans are byte ranges into the original UTF-8 string and always fall
//! on character boundaries.

use std::collections::HashSet;
use std::ops::Range;

/// Word characters match the regex `\w` class: alphanumerics and underscore.
pub fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Iterates over maximal runs of word characters with their byte offsets.
pub fn words(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut rest = text.char_indices().peekable();
    std::iter::from_fn(move || {
        while let Some(&(_, c)) = rest.peek() {
            if is_word_char(c) {
                break;
            }
            rest.next();
        }
        let (start, _) = *rest.peek()?;
        let mut end = start;
        while let Some(&(i, c)) = rest.peek() {
            if !is_word_char(c) {
                break;
            }
            end = i + c.len_utf8();
            rest.next();
        }
        Some((start, &text[start..end]))
    })
}

/// The set of lowercased words in `text`.
pub fn word_set(text: &str) -> HashSet<String> {
    words(text).map(|(_, w)| w.to_lowercase()).collect()
}

/// Splits text into sentence spans.
///
/// A sentence ends at a run of `.`, `!` or `?` followed by whitespace or the
/// end of input, or at a newline. Spans are trimmed and never empty.
pub fn sentences(text: &str) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        let end = match c {
            '\n' => Some(i),
            '.' | '!' | '?' => {
                let mut stop = i + c.len_utf8();
                while let Some(&(j, d)) = chars.peek() {
                    if matches!(d, '.' | '!' | '?') {
                        stop = j + d.len_utf8();
                        chars.next();
                    } else {
                        break;
                    }
                }
                match chars.peek() {
                    None => Some(stop),
                    Some(&(_, d)) if d.is_whitespace() => Some(stop),
                    _ => None,
                }
            }
            _ => None,
        };
        if let Some(end) = end {
            push_trimmed(text, start..end, &mut out);
            start = if c == '\n' { i + 1 } else { end };
        }
    }
    push_trimmed(text, start..text.len(), &mut out);
    out
}

fn push_trimmed(text: &str, range: Range<usize>, out: &mut Vec<Range<usize>>) {
    let slice = &text[range.clone()];
    let lead = slice.len() - slice.trim_start().len();
    let trail = slice.len() - slice.trim_end().len();
    if lead + trail < slice.len() {
        out.push(range.start + lead..range.end - trail);
    }
}

/// Collapses every whitespace run to a single space and trims the ends.
pub fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// First case-insensitive occurrence of `needle` in `haystack`.
pub fn find_case_insensitive(haystack: &str, needle: &str) -> Option<Range<usize>> {
    if needle.is_empty() {
        return None;
    }
    for (start, _) in haystack.char_indices() {
        let mut hay = haystack[start..].char_indices();
        let mut matched_to = None;
        let mut ok = true;
        for n in needle.chars() {
            match hay.next() {
                Some((off, h)) if chars_eq_ignore_case(h, n) => {
                    matched_to = Some(start + off + h.len_utf8());
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return matched_to.map(|end| start..end);
        }
    }
    None
}

fn chars_eq_ignore_case(a: char, b: char) -> bool {
    a == b || a.to_lowercase().eq(b.to_lowercase())
}

/// Byte offset of the char boundary after `n` Unicode scalar values.
pub fn byte_offset_of_char(text: &str, n: usize) -> usize {
    text.char_indices().nth(n).map(|(i, _)| i).unwrap_or(text.len())
}

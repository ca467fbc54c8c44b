//! Total parsers for backend completions.

/// Outcome of reading a chat completion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChatVerdict {
    No,
    Yes { quote: Option<String> },
    Unparseable,
}

/// Outcome of reading an entailment completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntailmentVerdict {
    Entailed,
    NotEntailed,
    Unparseable,
}

/// Splits off the first alphabetic token, skipping leading punctuation such
/// as quotes or markdown emphasis.
fn first_token(s: &str) -> (String, &str) {
    let s = s.trim_start_matches(|c: char| !c.is_alphanumeric());
    let len: usize = s.chars().take_while(|c| c.is_alphabetic()).map(char::len_utf8).sum();
    (s[..len].to_lowercase(), &s[len..])
}

const QUOTE_PAIRS: [(char, char); 4] = [('\'', '\''), ('"', '"'), ('\u{2018}', '\u{2019}'), ('\u{201c}', '\u{201d}')];

fn strip_wrapping(s: &str) -> Option<&str> {
    let mut chars = s.chars();
    let first = chars.next()?;
    let last = chars.next_back()?;
    QUOTE_PAIRS
        .iter()
        .any(|&(open, close)| first == open && last == close)
        .then(|| &s[first.len_utf8()..s.len() - last.len_utf8()])
}

/// The innermost quoted span of `s`, or `s` itself when nothing is quoted.
fn unquote(s: &str) -> &str {
    let mut s = s.trim();
    // a quoted span followed only by sentence punctuation
    for &(open, close) in &QUOTE_PAIRS {
        if let Some(start) = s.find(open) {
            let opens_span = s[..start].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
            let tail = s[start + open.len_utf8()..].rfind(close).map(|i| i + start + open.len_utf8());
            if let (true, Some(end)) = (opens_span, tail) {
                let after = &s[end + close.len_utf8()..];
                if after.chars().all(|c| matches!(c, '.' | '!' | '?' | ' ')) {
                    s = &s[start + open.len_utf8()..end];
                    break;
                }
            }
        }
    }
    while let Some(inner) = strip_wrapping(s.trim()) {
        s = inner;
    }
    s.trim()
}

pub fn parse_chat_response(raw: &str) -> ChatVerdict {
    let line = raw.trim().lines().next().unwrap_or("");
    let (token, rest) = first_token(line);
    match token.as_str() {
        "no" => ChatVerdict::No,
        "yes" => {
            let rest = rest.trim_start().trim_start_matches([':', ',', '-', '.', ';']);
            let quote = unquote(rest);
            ChatVerdict::Yes { quote: (!quote.is_empty()).then(|| quote.to_string()) }
        }
        _ => ChatVerdict::Unparseable,
    }
}

pub fn parse_entailment_response(raw: &str) -> EntailmentVerdict {
    let (token, _) = first_token(raw.trim());
    match token.as_str() {
        "yes" | "entailment" => EntailmentVerdict::Entailed,
        "no" | "not" | "neutral" | "contradiction" => EntailmentVerdict::NotEntailed,
        _ => EntailmentVerdict::Unparseable,
    }
}

//! Rule-based sentence segmentation.

use serde::{Deserialize, Serialize};

/// A sentence with its span in the source text, in characters (not bytes).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceSpan {
    pub text: String,
    pub start_offset: usize,
    pub end_offset: usize,
}

/// Lowercased, without the final period.
const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "st", "jr", "sr", "vs", "etc", "e.g", "i.e", "inc", "ltd", "co",
    "corp", "no", "fig", "approx", "u.s", "u.k", "jan", "feb", "mar", "apr", "jun", "jul", "aug",
    "sep", "sept", "oct", "nov", "dec", "gen", "gov", "sen", "rep", "rev", "col", "lt", "mt", "ft",
];

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}')
}

fn is_opener(c: char) -> bool {
    matches!(c, '"' | '\'' | '(' | '[' | '\u{201c}' | '\u{2018}')
}

/// The word ending right before byte `dot` (exclusive).
fn word_before(text: &str, dot: usize) -> &str {
    let head = &text[..dot];
    let start = head
        .char_indices()
        .rev()
        .find(|(_, c)| c.is_whitespace() || is_opener(*c))
        .map(|(i, c)| i + c.len_utf8())
        .unwrap_or(0);
    &head[start..]
}

fn period_is_abbreviation(text: &str, dot: usize) -> bool {
    let word = word_before(text, dot);
    let mut letters = word.chars();
    if let (Some(c), None) = (letters.next(), letters.next()) {
        if c.is_alphabetic() {
            return true;
        }
    }
    let lower = word.to_lowercase();
    ABBREVIATIONS.contains(&lower.as_str())
}

/// Splits after `.`, `!` or `?` (plus any closing quotes or brackets) when
/// followed by whitespace and then an uppercase letter, digit or opening
/// quote. Periods after single-letter initials and common abbreviations do
/// not end a sentence.
pub fn segment_sentences(text: &str) -> Vec<SentenceSpan> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut boundaries = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if !matches!(c, '.' | '!' | '?') {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < chars.len() && matches!(chars[j].1, '.' | '!' | '?') {
            j += 1;
        }
        while j < chars.len() && is_closer(chars[j].1) {
            j += 1;
        }
        let end = chars.get(j).map(|(p, _)| *p).unwrap_or(text.len());
        let mut k = j;
        while k < chars.len() && chars[k].1.is_whitespace() {
            k += 1;
        }
        let followed_by_space = k > j;
        let next_ok = chars
            .get(k)
            .is_some_and(|(_, n)| n.is_uppercase() || n.is_ascii_digit() || is_opener(*n));
        let abbreviation = c == '.' && j == i + 1 && period_is_abbreviation(text, pos);
        if followed_by_space && next_ok && !abbreviation {
            boundaries.push(end);
        }
        i = j.max(i + 1);
    }
    boundaries.push(text.len());

    let mut out = Vec::new();
    let mut start = 0;
    for b in boundaries {
        push_trimmed(text, start, b, &mut out);
        start = b;
    }
    out
}

fn push_trimmed(text: &str, start: usize, end: usize, out: &mut Vec<SentenceSpan>) {
    let piece = &text[start..end];
    let lead = piece.len() - piece.trim_start().len();
    let trimmed = piece.trim();
    if trimmed.is_empty() {
        return;
    }
    let s = text[..start + lead].chars().count();
    out.push(SentenceSpan {
        text: trimmed.to_string(),
        start_offset: s,
        end_offset: s + trimmed.chars().count(),
    });
}

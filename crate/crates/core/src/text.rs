//! Whitespace handling shared by chunking, length policies and answer matching.
//!
//! A "word" is a maximal run of non-whitespace characters.

/// Collapses every run of whitespace to a single space and trims both ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn words(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Keeps the first `max_words` words, joined by single spaces.
pub fn truncate_words(text: &str, max_words: usize) -> String {
    text.split_whitespace()
        .take(max_words)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Lowercases and collapses whitespace; the normalization used for answer containment.
pub fn normalize_for_match(text: &str) -> String {
    normalize_whitespace(&text.to_lowercase())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collapses_runs() {
        assert_eq!(normalize_whitespace("  a \t b\n\nc  "), "a b c");
        assert_eq!(normalize_whitespace(" \n "), "");
    }

    #[test]
    fn truncation_keeps_prefix() {
        assert_eq!(truncate_words("one two  three four", 2), "one two");
        assert_eq!(truncate_words("one", 5), "one");
        assert_eq!(word_count("a  b\tc"), 3);
    }
}

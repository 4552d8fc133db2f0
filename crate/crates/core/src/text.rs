//! Tokenization shared by the language filter and the hash embedder.

use alloc::string::String;
use alloc::vec::Vec;

/// Strips leading/trailing ASCII punctuation and case-folds a raw
/// whitespace-delimited word. Returns `None` when nothing is left.
pub fn normalize_token(raw: &str) -> Option<String> {
    let trimmed = raw.trim_matches(|c: char| c.is_ascii_punctuation());
    if trimmed.is_empty() {
        None
    } else {
        Some(trimmed.to_lowercase())
    }
}

/// Normalized tokens of `text`, in order. Words that are pure punctuation
/// are skipped.
pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().filter_map(normalize_token)
}

/// Number of whitespace-delimited words.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// First `n` whitespace-delimited words joined by single spaces.
pub fn truncate_words(text: &str, n: usize) -> String {
    let words: Vec<&str> = text.split_whitespace().take(n).collect();
    words.join(" ")
}

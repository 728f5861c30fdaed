//! Small text helpers shared by dedup, validation and enrichment.

use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

/// Collapses every run of whitespace into a single space and trims the ends.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercase tokens with punctuation removed, split on whitespace.
///
/// Punctuation is dropped rather than replaced, so `IFMIF-DONES` stays one
/// token (`ifmifdones`).
pub fn fold_tokens(s: &str) -> Vec<String> {
    s.split_whitespace()
        .map(|tok| {
            tok.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// Strips combining marks after canonical decomposition (`País` -> `Pais`).
pub fn strip_diacritics(s: &str) -> String {
    s.nfd()
        .filter(|c| !unicode_normalization::char::is_combining_mark(*c))
        .collect()
}

/// Number of whitespace-separated tokens.
pub fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Number of Unicode scalar values.
pub fn char_count(s: &str) -> usize {
    s.chars().count()
}

/// Hex SHA-256 of `data`, truncated to `len` hex characters.
pub fn short_digest(data: impl AsRef<[u8]>, len: usize) -> String {
    let full = hex::encode(Sha256::digest(data.as_ref()));
    full[..len.min(full.len())].to_string()
}

/// Full hex SHA-256.
pub fn sha256_hex(data: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(data.as_ref()))
}

/// Case-insensitive substring search.
pub fn contains_ci(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return true;
    }
    haystack.to_lowercase().contains(&needle.to_lowercase())
}

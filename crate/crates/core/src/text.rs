//! Text normalization shared by the belief store, the matchers and the
//! knowledge base.
//!
//! Normalized text is NFC, lower-cased, with every whitespace run collapsed
//! to a single space and no leading or trailing whitespace. Tokens are the
//! maximal runs of alphanumeric characters in normalized text.

use std::collections::BTreeSet;

use unicode_normalization::UnicodeNormalization;

/// Normalizes raw text. Idempotent.
pub fn normalize_text(raw: &str) -> String {
    let composed: String = raw.nfc().collect();
    let lowered = composed.to_lowercase();
    let recomposed: String = lowered.nfc().collect();
    collapse_whitespace(&recomposed)
}

/// Collapses whitespace runs to single spaces and trims, preserving case.
pub fn collapse_whitespace(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for word in raw.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Tokens of already-normalized text, in order of appearance.
pub fn tokens(normalized: &str) -> impl Iterator<Item = &str> {
    normalized
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
}

/// Distinct tokens of raw text (normalizes first).
pub fn token_set(raw: &str) -> BTreeSet<String> {
    let normalized = normalize_text(raw);
    tokens(&normalized).map(str::to_owned).collect()
}

pub(crate) fn has_control_chars(s: &str) -> bool {
    s.chars().any(char::is_control)
}

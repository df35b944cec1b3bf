//! Shared string normalization helpers.

use unicode_normalization::UnicodeNormalization;

/// Unicode NFC followed by collapsing every whitespace run to one space.
pub fn normalize_text(s: &str) -> String {
    let nfc: String = s.nfc().collect();
    collapse_whitespace(&nfc)
}

/// Collapses whitespace runs to a single ASCII space and trims both ends.
pub fn collapse_whitespace(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Lowercased, whitespace-collapsed form used for substring leak checks.
pub fn leak_normal_form(s: &str) -> String {
    collapse_whitespace(&s.to_lowercase())
}

const TERMINAL_PUNCTUATION: &[char] = &['.', ',', ';', ':', '!', '?', '"', '\''];

/// Normal form for the exact-match fast path of answer grading:
/// lowercase, trim, collapse whitespace, strip terminal punctuation.
pub fn answer_normal_form(s: &str) -> String {
    let collapsed = collapse_whitespace(&s.nfc().collect::<String>().to_lowercase());
    collapsed.trim_end_matches(TERMINAL_PUNCTUATION).trim_end().to_string()
}

/// Number of whitespace-delimited words.
pub fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

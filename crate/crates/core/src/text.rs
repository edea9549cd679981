//! Small text helpers shared by the catalog, query and curation stages.

use std::ops::Range;

pub fn casefold(s: &str) -> String {
    s.to_lowercase()
}

/// Collapse runs of whitespace to single spaces and trim both ends.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Dedup key used everywhere a case- and whitespace-insensitive comparison is needed.
pub fn fold_key(s: &str) -> String {
    casefold(&normalize_whitespace(s))
}

/// Lower-cased alphanumeric tokens.
pub fn tokens(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(casefold).collect()
}

/// Byte range of the first case-insensitive whole-word occurrence of `needle`.
///
/// A word boundary is the string edge or any non-alphanumeric character, so
/// needles with punctuation ("BMW M4", "C++") work as expected.
pub fn find_whole_word(haystack: &str, needle: &str) -> Option<Range<usize>> {
    let needle: Vec<char> = needle.trim().chars().flat_map(char::to_lowercase).collect();
    if needle.is_empty() {
        return None;
    }
    let is_word = |c: char| c.is_alphabetic() || c.is_numeric();
    let mut prev: Option<char> = None;
    for (start, first) in haystack.char_indices() {
        if prev.is_none_or(|p| !is_word(p)) {
            if let Some(end) = match_folded(&haystack[start..], &needle) {
                let end = start + end;
                if haystack[end..].chars().next().is_none_or(|c| !is_word(c)) {
                    return Some(start..end);
                }
            }
        }
        prev = Some(first);
    }
    None
}

/// Byte length of the prefix of `s` whose lower-cased chars equal `needle`.
fn match_folded(s: &str, needle: &[char]) -> Option<usize> {
    let mut i = 0;
    for (pos, c) in s.char_indices() {
        if i == needle.len() {
            return Some(pos);
        }
        for l in c.to_lowercase() {
            if needle.get(i) != Some(&l) {
                return None;
            }
            i += 1;
        }
    }
    (i == needle.len()).then_some(s.len())
}

pub fn contains_whole_word(haystack: &str, needle: &str) -> bool {
    find_whole_word(haystack, needle).is_some()
}

pub fn short_hash(parts: &[&str]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            h.update([0x1f]);
        }
        h.update(p.as_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

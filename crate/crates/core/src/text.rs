//! Text normalization and phrase matching shared by scoring and exemplar
//! verification.

/// Lowercases, turns punctuation into spaces and collapses whitespace.
/// Idempotent.
pub fn normalize(text: &str) -> String {
    let mapped: String = text
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c.is_whitespace() {
                c
            } else {
                ' '
            }
        })
        .flat_map(char::to_lowercase)
        .collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn tokens(text: &str) -> Vec<String> {
    normalize(text)
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Position of the first whole-word occurrence of `phrase` in `haystack`
/// (both already tokenized).
pub fn find_phrase(haystack: &[String], phrase: &[String]) -> Option<usize> {
    if phrase.is_empty() || phrase.len() > haystack.len() {
        return None;
    }
    haystack.windows(phrase.len()).position(|w| w == phrase)
}

/// Case- and punctuation-insensitive whole-word containment.
pub fn contains_phrase(text: &str, phrase: &str) -> bool {
    find_phrase(&tokens(text), &tokens(phrase)).is_some()
}

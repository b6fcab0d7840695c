//! Shared tokenization and sentence segmentation.

use std::sync::OnceLock;

use regex::Regex;

fn word_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{Alphabetic}\p{N}_]+").unwrap())
}

/// Unicode word tokens, in order, with repeats.
pub fn tokenize(text: &str) -> Vec<String> {
    word_re()
        .find_iter(text)
        .map(|m| m.as_str().to_string())
        .collect()
}

/// Abbreviations after which a period does not end a sentence.
const SENTENCE_GUARDS: &[&str] = &[
    "e.g", "i.e", "etc", "vs", "dr", "mr", "mrs", "ms", "fig", "no", "st", "approx",
];

/// Punctuation-based sentence segmentation on `.?!;` with a small guard list
/// so common abbreviations do not split.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        current.push(c);
        if matches!(c, '.' | '?' | '!' | ';') {
            if c == '.' && is_guarded(&current) {
                continue;
            }
            // Avoid splitting decimal numbers like "0.75".
            if c == '.'
                && i + 1 < chars.len()
                && chars[i + 1].is_ascii_digit()
                && i > 0
                && chars[i - 1].is_ascii_digit()
            {
                continue;
            }
            let trimmed = current.trim();
            if !trimmed.is_empty() {
                sentences.push(trimmed.to_string());
            }
            current.clear();
        }
    }
    let trimmed = current.trim();
    if !trimmed.is_empty() {
        sentences.push(trimmed.to_string());
    }
    sentences
}

fn is_guarded(buf: &str) -> bool {
    let before = &buf[..buf.len() - 1];
    let tail: String = before
        .chars()
        .rev()
        .take_while(|c| c.is_alphanumeric() || *c == '.')
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    let tail = tail.trim_end_matches('.').to_lowercase();
    // A single letter before a period ("e." mid-way through "e.g.") never
    // ends a sentence.
    if tail.chars().count() == 1 && tail.chars().all(char::is_alphabetic) {
        return true;
    }
    SENTENCE_GUARDS.iter().any(|g| {
        let g = g.trim_end_matches('.');
        tail == g || tail.ends_with(&format!(".{g}"))
    })
}

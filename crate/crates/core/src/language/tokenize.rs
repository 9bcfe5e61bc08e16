use std::sync::OnceLock;

use regex::Regex;

/// One lexical unit of text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Piece {
    /// Lowercased word or single punctuation mark.
    Word(String),
    /// `<image-i>` with its 1-based index.
    Placeholder(usize),
}

fn pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)<image-(\d+)>|[\p{Alphabetic}\p{N}]+(?:[-'.][\p{Alphabetic}\p{N}]+)*|[^\s\p{Alphabetic}\p{N}]")
            .expect("valid regex")
    })
}

/// Splits text into lowercased words, punctuation marks and image
/// placeholders. Hyphens, apostrophes and dots inside a word keep it whole
/// (`58-year-old`, `what's`, `3.5`).
pub fn split_pieces(text: &str) -> Vec<Piece> {
    pattern()
        .captures_iter(text)
        .map(|cap| match cap.get(1) {
            Some(idx) => Piece::Placeholder(idx.as_str().parse().unwrap_or(usize::MAX)),
            None => Piece::Word(cap[0].to_lowercase()),
        })
        .collect()
}

pub fn is_punctuation(word: &str) -> bool {
    !word.chars().any(|c| c.is_alphanumeric())
}

/// Lowercased words only: placeholders and punctuation dropped.
pub fn words(text: &str) -> Vec<String> {
    split_pieces(text)
        .into_iter()
        .filter_map(|p| match p {
            Piece::Word(w) if !is_punctuation(&w) => Some(w),
            _ => None,
        })
        .collect()
}

pub fn placeholder(index: usize) -> String {
    format!("<image-{index}>")
}

/// Joins pieces with single spaces, attaching closing punctuation to the
/// previous piece and opening brackets to the next.
pub fn join_pieces<S: AsRef<str>>(pieces: &[S]) -> String {
    let mut out = String::new();
    let mut glue_next = true;
    for p in pieces {
        let p = p.as_ref();
        let closing = matches!(p, "," | "." | ";" | ":" | "?" | "!" | ")" | "]");
        if !glue_next && !closing {
            out.push(' ');
        }
        out.push_str(p);
        glue_next = matches!(p, "(" | "[");
    }
    out
}

/// Canonical spelling of `text`: lowercased pieces joined by [`join_pieces`].
pub fn canonicalize(text: &str) -> String {
    let pieces: Vec<String> = split_pieces(text)
        .into_iter()
        .map(|p| match p {
            Piece::Word(w) => w,
            Piece::Placeholder(i) => placeholder(i),
        })
        .collect();
    join_pieces(&pieces)
}

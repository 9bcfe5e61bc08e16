use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::error::{Error, Result};
use crate::language::tokenize::{split_pieces, Piece};

/// Medical term list. Terms are stored as lowercase token sequences, so
/// multi-word terms match consecutive tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    terms: BTreeSet<Vec<String>>,
    /// Term lengths present for each first token, longest first.
    lengths: HashMap<String, Vec<usize>>,
}

fn term_tokens(term: &str) -> Vec<String> {
    split_pieces(term)
        .into_iter()
        .filter_map(|p| match p {
            Piece::Word(w) => Some(w),
            Piece::Placeholder(_) => None,
        })
        .collect()
}

impl Lexicon {
    /// Lexicon with no terms: nothing is ever marked medical.
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new<'a>(terms: impl IntoIterator<Item = &'a str>) -> Self {
        let mut lex = Lexicon::default();
        for t in terms {
            let toks = term_tokens(t);
            if toks.is_empty() {
                continue;
            }
            lex.terms.insert(toks);
        }
        for t in &lex.terms {
            lex.lengths.entry(t[0].clone()).or_default().push(t.len());
        }
        for v in lex.lengths.values_mut() {
            v.sort_unstable_by(|a, b| b.cmp(a));
            v.dedup();
        }
        lex
    }

    /// Parses one term per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let lex = Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')));
        if lex.is_empty() {
            return Err(Error::data("lexicon has no terms"));
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?).map_err(|e| Error::data(format!("{}: {e}", path.display())))
    }

    /// The shipped ~200-term default.
    pub fn default_terms() -> Self {
        Self::parse(include_str!("../../data/lexicon.txt")).expect("shipped lexicon parses")
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn contains(&self, term: &str) -> bool {
        self.terms.contains(&term_tokens(term))
    }

    /// Greedy longest-first matching over `tokens`; returns `(start, len)`
    /// of every matched term, left to right and non-overlapping.
    pub fn match_spans<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<(usize, usize)> {
        let lower: Vec<String> = tokens.iter().map(|t| t.as_ref().to_lowercase()).collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < lower.len() {
            let hit = self.lengths.get(&lower[i]).and_then(|lens| {
                lens.iter().copied().find(|&n| i + n <= lower.len() && self.terms.contains(&lower[i..i + n]))
            });
            match hit {
                Some(n) => {
                    out.push((i, n));
                    i += n;
                }
                None => i += 1,
            }
        }
        out
    }

    /// Medical terms of `text` in order of appearance, as space-joined
    /// lowercase token sequences. Placeholders break term runs.
    pub fn extract(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut run: Vec<String> = Vec::new();
        let mut flush = |run: &mut Vec<String>| {
            for (s, n) in self.match_spans(run) {
                out.push(run[s..s + n].join(" "));
            }
            run.clear();
        };
        for p in split_pieces(text) {
            match p {
                Piece::Word(w) => run.push(w),
                Piece::Placeholder(_) => flush(&mut run),
            }
        }
        flush(&mut run);
        out
    }
}

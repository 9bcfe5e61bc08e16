use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::language::tokenize::words;
use crate::training::Lexicon;

/// Longest common block of `a[alo..ahi]` and `b[blo..bhi]`: earliest in `a`,
/// then earliest in `b`, among the longest.
fn longest_match(a: &[char], b: &[char], alo: usize, ahi: usize, blo: usize, bhi: usize) -> (usize, usize, usize) {
    let (mut bi, mut bj, mut bk) = (alo, blo, 0);
    let width = bhi - blo;
    // cur[c]: length of the common run ending at a[i], b[blo + c - 1].
    let mut prev = vec![0usize; width + 1];
    let mut cur = vec![0usize; width + 1];
    for i in alo..ahi {
        for j in blo..bhi {
            let c = j - blo + 1;
            cur[c] = if a[i] == b[j] { prev[c - 1] + 1 } else { 0 };
            let k = cur[c];
            if k > bk {
                (bi, bj, bk) = (i + 1 - k, j + 1 - k, k);
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    (bi, bj, bk)
}

fn matched_chars(a: &[char], b: &[char], alo: usize, ahi: usize, blo: usize, bhi: usize) -> usize {
    if alo >= ahi || blo >= bhi {
        return 0;
    }
    let (i, j, k) = longest_match(a, b, alo, ahi, blo, bhi);
    if k == 0 {
        return 0;
    }
    k + matched_chars(a, b, alo, i, blo, j) + matched_chars(a, b, i + k, ahi, j + k, bhi)
}

/// Ratcliff/Obershelp ratio `2M / (|a| + |b|)` over characters. Arguments
/// are put in a canonical order first so the ratio is symmetric; two empty
/// strings score 1.
pub fn similarity_ratio(a: &str, b: &str) -> f64 {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let total = a.len() + b.len();
    if total == 0 {
        return 1.0;
    }
    2.0 * matched_chars(&a, &b, 0, a.len(), 0, b.len()) as f64 / total as f64
}

/// How well `candidate` matches `prediction` (both lowercase): the best
/// ratio against the whole prediction or any run of as many words as the
/// candidate has.
pub fn candidate_score(prediction: &str, candidate: &str) -> f64 {
    let mut best = similarity_ratio(prediction, candidate);
    let words = words(prediction);
    let n = candidate.split_whitespace().count().max(1);
    for window in words.windows(n) {
        best = best.max(similarity_ratio(&window.join(" "), candidate));
    }
    best
}

/// Index of the candidate with the highest [`candidate_score`] against
/// `prediction`, both lowercased; ties go to the earlier candidate.
pub fn resolve_closed_index(prediction: &str, candidates: &[impl AsRef<str>]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::invalid("closed candidate list is empty"));
    }
    let p = prediction.to_lowercase();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, c) in candidates.iter().enumerate() {
        let s = candidate_score(&p, &c.as_ref().to_lowercase());
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    Ok(best)
}

pub fn resolve_closed<'a>(prediction: &str, candidates: &'a [String]) -> Result<&'a str> {
    Ok(&candidates[resolve_closed_index(prediction, candidates)?])
}

fn counts(tokens: &[String]) -> HashMap<&str, usize> {
    let mut m = HashMap::new();
    for t in tokens {
        *m.entry(t.as_str()).or_insert(0) += 1;
    }
    m
}

fn overlap(a: &[String], b: &[String]) -> usize {
    let cb = counts(b);
    counts(a).iter().map(|(t, &n)| n.min(cb.get(t).copied().unwrap_or(0))).sum()
}

/// BLEU with unigrams only: clipped precision times the brevity penalty
/// `exp(min(0, 1 - |ref|/|pred|))`. Words are lowercased and punctuation is
/// ignored.
pub fn bleu1(prediction: &str, reference: &str) -> f64 {
    let p = words(prediction);
    let r = words(reference);
    if p.is_empty() {
        return 0.0;
    }
    let precision = overlap(&p, &r) as f64 / p.len() as f64;
    let bp = (1.0 - r.len() as f64 / p.len() as f64).min(0.0).exp();
    precision * bp
}

/// ROUGE-1 recall: clipped unigram overlap over the reference length.
pub fn rouge1(prediction: &str, reference: &str) -> Result<f64> {
    let r = words(reference);
    if r.is_empty() {
        return Err(Error::data("ROUGE-1 needs a non-empty reference"));
    }
    Ok(overlap(&words(prediction), &r) as f64 / r.len() as f64)
}

/// Precision and recall of lexicon terms. A side with no medical terms
/// scores 1 if the other side has none either, else 0.
pub fn umls_precision_recall(prediction: &str, reference: &str, lexicon: &Lexicon) -> (f64, f64) {
    let p = lexicon.extract(prediction);
    let r = lexicon.extract(reference);
    let hit = overlap(&p, &r) as f64;
    let ratio = |den: usize, other: usize| {
        if den == 0 {
            if other == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            hit / den as f64
        }
    };
    (ratio(p.len(), r.len()), ratio(r.len(), p.len()))
}

/// How F1 is averaged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum F1Mode {
    /// F1 of one positive class.
    Binary(String),
    /// Unweighted mean over the listed classes that occur as a prediction
    /// or a reference.
    Macro(Vec<String>),
}

fn class_f1(pairs: &[(String, String)], class: &str) -> f64 {
    let (mut tp, mut fp, mut fne) = (0usize, 0usize, 0usize);
    for (pred, truth) in pairs {
        match (pred == class, truth == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fne += 1,
            (false, false) => {}
        }
    }
    if tp + fp + fne == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fne) as f64
    }
}

/// Accuracy and F1 over `(resolved, reference)` pairs, compared
/// case-insensitively.
pub fn accuracy_f1(pairs: &[(String, String)], mode: &F1Mode) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::data("accuracy needs at least one record"));
    }
    let lower: Vec<(String, String)> = pairs.iter().map(|(p, r)| (p.to_lowercase(), r.to_lowercase())).collect();
    let acc = lower.iter().filter(|(p, r)| p == r).count() as f64 / lower.len() as f64;
    let f1 = match mode {
        F1Mode::Binary(pos) => class_f1(&lower, &pos.to_lowercase()),
        F1Mode::Macro(classes) => {
            let seen: Vec<String> = classes
                .iter()
                .map(|c| c.to_lowercase())
                .filter(|c| lower.iter().any(|(p, r)| p == c || r == c))
                .collect();
            seen.iter().map(|c| class_f1(&lower, c)).sum::<f64>() / seen.len().max(1) as f64
        }
    };
    Ok((acc, f1))
}

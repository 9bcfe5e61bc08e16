use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

use super::{Sample, SampleKind};

/// `Some(true)` / `Some(false)` for instruction samples answered "yes" /
/// "no", `None` otherwise.
pub fn judgment_answer(sample: &Sample) -> Option<bool> {
    if sample.kind != SampleKind::Instruction {
        return None;
    }
    match sample.response.as_deref()?.trim().to_lowercase().as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

/// Down-samples the majority answer so yes and no counts are equal.
/// Which majority samples survive is drawn from `rng`; the output keeps
/// the input order. Samples that are not judgments are rejected.
pub fn balance_judgments(pool: Vec<Sample>, rng: &mut impl Rng) -> Result<Vec<Sample>> {
    let mut yes = Vec::new();
    let mut no = Vec::new();
    for (i, s) in pool.iter().enumerate() {
        match judgment_answer(s) {
            Some(true) => yes.push(i),
            Some(false) => no.push(i),
            None => return Err(Error::data(format!("sample {} is not a yes/no judgment", s.id))),
        }
    }
    if yes.is_empty() || no.is_empty() {
        return Err(Error::data("cannot balance judgments: one answer class is empty"));
    }
    let keep_n = yes.len().min(no.len());
    let (major, minor) = if yes.len() >= no.len() { (yes, no) } else { (no, yes) };
    let mut chosen = major;
    chosen.shuffle(rng);
    chosen.truncate(keep_n);
    chosen.extend(minor);
    chosen.sort_unstable();

    let mut slots: Vec<Option<Sample>> = pool.into_iter().map(Some).collect();
    Ok(chosen.into_iter().map(|i| slots[i].take().expect("index used once")).collect())
}

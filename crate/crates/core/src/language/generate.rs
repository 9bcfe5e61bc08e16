use crate::error::Result;

use super::vocab::{Vocabulary, BOS, EOS, IMG_CLOSE, IMG_OPEN, PAD};

/// Ids that greedy decoding never emits.
pub fn is_structural(id: u32, vocab: &Vocabulary) -> bool {
    matches!(id, PAD | BOS | IMG_OPEN | IMG_CLOSE) || vocab.placeholder_index(id).is_some()
}

/// Argmax over `logits`, skipping structural ids; ties go to the lower id.
pub fn greedy_pick(logits: &[f64], vocab: &Vocabulary) -> u32 {
    let mut best = EOS;
    let mut best_val = f64::NEG_INFINITY;
    for (id, &v) in logits.iter().enumerate() {
        let id = id as u32;
        if is_structural(id, vocab) {
            continue;
        }
        if v > best_val {
            best_val = v;
            best = id;
        }
    }
    best
}

/// Greedy decoding. `next_logits` maps the full id sequence so far to the
/// logits row of its last position. Stops at EOS or after `max_new` tokens
/// and returns the generated ids (EOS excluded).
pub fn greedy_decode(
    prompt: &[u32],
    max_new: usize,
    vocab: &Vocabulary,
    mut next_logits: impl FnMut(&[u32]) -> Result<Vec<f64>>,
) -> Result<Vec<u32>> {
    let mut ids = prompt.to_vec();
    let mut out = Vec::new();
    for _ in 0..max_new {
        let logits = next_logits(&ids)?;
        let next = greedy_pick(&logits, vocab);
        if next == EOS {
            break;
        }
        ids.push(next);
        out.push(next);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_new_zero_generates_nothing() {
        let vocab = Vocabulary::induce(["a"], 1);
        let out = greedy_decode(&[BOS], 0, &vocab, |_| panic!("must not be called")).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn stops_at_eos_and_skips_structural_ids() {
        let vocab = Vocabulary::induce(["a b"], 1);
        let a = vocab.word_id("a");
        let script = [a, EOS, a];
        let mut step = 0;
        let out = greedy_decode(&[BOS], 5, &vocab, |_| {
            let mut logits = vec![0.0; vocab.len()];
            logits[IMG_OPEN as usize] = 100.0;
            logits[script[step] as usize] = 10.0;
            step += 1;
            Ok(logits)
        })
        .unwrap();
        assert_eq!(out, vec![a]);
    }
}

use crate::corpus::{Sample, SampleKind};
use crate::error::{Error, Result};
use crate::language::{plan_layout, Layout, Slot, Vocabulary, BOS, EOS, PAD};
use crate::numerics::{Tape, Var};

use super::Lexicon;

pub const W_MEDICAL: f64 = 3.0;
pub const W_TEXT: f64 = 1.0;
pub const W_NONE: f64 = 0.0;

/// Token ids with one loss weight per assembled position.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedTokenSequence {
    pub kind: SampleKind,
    /// `[BOS] ++ text ids ++ [EOS]` before placeholder expansion.
    pub ids: Vec<u32>,
    pub layout: Layout,
    /// Weight of each layout position, as a prediction target.
    pub weights: Vec<f64>,
}

impl WeightedTokenSequence {
    /// Next-token targets and weights for logits rows `0..L-1`. Visual
    /// positions target PAD with weight 0.
    pub fn targets(&self) -> (Vec<usize>, Vec<f64>) {
        let targets = self.layout.slots[1..].iter().map(|s| s.token().unwrap_or(PAD) as usize).collect();
        (targets, self.weights[1..].to_vec())
    }
}

/// Token ids of `sample` and the index of its first response id (the
/// length of the id prefix for interleaved samples is irrelevant).
fn sample_ids(sample: &Sample, vocab: &Vocabulary) -> Result<(Vec<u32>, usize)> {
    match sample.kind {
        SampleKind::Interleaved => Ok((vocab.tokenize(&sample.text), 1)),
        SampleKind::Instruction => {
            let (Some(i), Some(r)) = (&sample.instruction, &sample.response) else {
                return Err(Error::data(format!(
                    "sample {}: instruction sample without a marked instruction/response boundary",
                    sample.id
                )));
            };
            let mut ids = vec![BOS];
            ids.extend(vocab.encode(i));
            let boundary = ids.len();
            ids.extend(vocab.encode(r));
            ids.push(EOS);
            Ok((ids, boundary))
        }
    }
}

/// Per-position loss weights. Interleaved samples weight BOS, image
/// sentinels and visual rows 0, lexicon tokens 3 and all other text 1.
/// Instruction samples additionally weight every instruction position 0.
/// The EOS target always has weight 1.
pub fn assign_weights(
    sample: &Sample,
    vocab: &Vocabulary,
    lexicon: &Lexicon,
    n_queries: usize,
) -> Result<WeightedTokenSequence> {
    let (ids, boundary) = sample_ids(sample, vocab)?;
    let layout = plan_layout(&ids, vocab, n_queries, sample.volume_paths.len())?;
    let mut weights = vec![W_NONE; layout.len()];

    // Runs of ordinary text ids that lexicon matching may span.
    let first_text = if sample.kind == SampleKind::Instruction { boundary } else { 1 };
    let mut runs: Vec<Vec<usize>> = vec![Vec::new()];
    for (i, &id) in ids.iter().enumerate().take(ids.len() - 1).skip(first_text) {
        if vocab.placeholder_index(id).is_some() {
            runs.push(Vec::new());
        } else {
            runs.last_mut().expect("non-empty").push(i);
        }
    }
    for run in runs.iter().filter(|r| !r.is_empty()) {
        for &i in run {
            weights[layout.source_offsets[i]] = W_TEXT;
        }
        let tokens: Vec<String> = run.iter().map(|&i| vocab.token(ids[i])).collect();
        for (s, n) in lexicon.match_spans(&tokens) {
            for &i in &run[s..s + n] {
                weights[layout.source_offsets[i]] = W_MEDICAL;
            }
        }
    }
    let eos = layout.len() - 1;
    debug_assert_eq!(layout.slots[eos], Slot::Token(EOS));
    weights[eos] = W_TEXT;
    Ok(WeightedTokenSequence { kind: sample.kind, ids, layout, weights })
}

/// Weighted next-token loss of one sequence given its logits.
pub fn sequence_loss(tape: &mut Tape, logits: Var, seq: &WeightedTokenSequence) -> Result<Var> {
    let l = seq.layout.len();
    let inputs = tape.slice_rows(logits, 0, l - 1)?;
    let (targets, weights) = seq.targets();
    tape.weighted_nll(inputs, &targets, &weights)
}

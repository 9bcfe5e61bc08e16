//! Text side of the model: vocabulary with image sentinels, tokenization,
//! interleaved image-text assembly, the causal decoder and greedy decoding.

mod assemble;
mod generate;
mod lm;
pub mod tokenize;
mod vocab;

pub use assemble::{assemble, plan_layout, AssembledSequence, Layout, Slot, VisualSpan};
pub use generate::{greedy_decode, greedy_pick, is_structural};
pub use lm::{forward_lm, init_params, LMConfig, POS_EMB, PREFIX, TOK_EMB};
pub use vocab::{Vocabulary, BOS, EOS, IMG_CLOSE, IMG_OPEN, PAD, PLACEHOLDER_BASE, UNK};

//! Weighted next-token objective, lexicon-driven loss weights and the
//! two-phase training schedule.

mod lexicon;
mod train;
mod weights;

pub use lexicon::Lexicon;
pub use train::{
    build_examples, example_loss, induce_vocab, train, train_with, LossRecord, TrainCorpus, TrainExample, TrainReport,
    TrainSchedule,
};
pub use weights::{assign_weights, sequence_loss, WeightedTokenSequence, W_MEDICAL, W_NONE, W_TEXT};

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Sample;
use crate::error::{Error, Result};
use crate::language::{LMConfig, Vocabulary};
use crate::model::Model;
use crate::numerics::{adamw_step, AdamWConfig, Tape, Var};
use crate::volume::Volume;

use super::weights::{assign_weights, sequence_loss, WeightedTokenSequence};
use super::Lexicon;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSchedule {
    /// Leading epochs that keep the LM body frozen.
    pub phase1_epochs: usize,
    /// Leading epochs drawn from the pretrain split; the rest use finetune.
    pub pretrain_epochs: usize,
    pub total_epochs: usize,
    pub freeze_lm_in_phase1: bool,
    pub batch_size: usize,
    /// Micro-batches accumulated into each optimizer step.
    pub grad_accum: usize,
    pub max_steps: Option<usize>,
    /// Stop once the mean loss of the last 10 steps falls below this.
    pub stop_below: Option<f64>,
    /// Linear ramp from zero to the base learning rate.
    pub warmup_steps: usize,
    /// Cosine decay after warmup down to `min_lr_ratio` of the base rate.
    pub cosine_decay: bool,
    pub min_lr_ratio: f64,
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            phase1_epochs: 1,
            pretrain_epochs: 4,
            total_epochs: 6,
            freeze_lm_in_phase1: true,
            batch_size: 4,
            grad_accum: 1,
            max_steps: None,
            stop_below: None,
            warmup_steps: 0,
            cosine_decay: false,
            min_lr_ratio: 0.1,
            max_grad_norm: None,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.phase1_epochs > self.total_epochs || self.pretrain_epochs > self.total_epochs {
            return Err(Error::invalid("phase1_epochs and pretrain_epochs must not exceed total_epochs"));
        }
        if self.batch_size == 0 || self.grad_accum == 0 {
            return Err(Error::invalid("batch_size and grad_accum must be positive"));
        }
        if !(0.0..=1.0).contains(&self.min_lr_ratio) {
            return Err(Error::invalid("min_lr_ratio must lie in [0, 1]"));
        }
        if self.max_grad_norm.is_some_and(|m| !(m > 0.0)) {
            return Err(Error::invalid("max_grad_norm must be positive"));
        }
        Ok(())
    }

    /// Optimizer steps a full run takes over splits of the given sizes.
    pub fn planned_steps(&self, pretrain: usize, finetune: usize) -> usize {
        let per_step = self.batch_size * self.grad_accum;
        let steps: usize = (0..self.total_epochs)
            .map(|e| if e < self.pretrain_epochs { pretrain } else { finetune })
            .map(|n| n.div_ceil(per_step))
            .sum();
        self.max_steps.map_or(steps, |m| steps.min(m))
    }

    /// Learning-rate multiplier for 1-based `step` out of `total`.
    pub fn lr_factor(&self, step: usize, total: usize) -> f64 {
        if step <= self.warmup_steps {
            return step as f64 / self.warmup_steps.max(1) as f64;
        }
        if !self.cosine_decay || total <= self.warmup_steps {
            return 1.0;
        }
        let progress = ((step - self.warmup_steps - 1) as f64 / (total - self.warmup_steps) as f64).min(1.0);
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.min_lr_ratio + (1.0 - self.min_lr_ratio) * cos
    }
}

/// A weighted sequence with its raw volumes.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub id: String,
    pub seq: WeightedTokenSequence,
    pub volumes: Vec<Volume>,
}

/// The two training stages' inputs.
#[derive(Debug, Clone, Default)]
pub struct TrainCorpus {
    pub pretrain: Vec<TrainExample>,
    pub finetune: Vec<TrainExample>,
}

/// Vocabulary over every training text, with room for the largest image
/// count seen.
pub fn induce_vocab<'a>(samples: impl IntoIterator<Item = &'a Sample> + Clone) -> Vocabulary {
    let max_images = samples.clone().into_iter().map(|s| s.volume_paths.len()).max().unwrap_or(1).max(1);
    Vocabulary::induce(samples.into_iter().map(|s| s.text.as_str()), max_images)
}

pub fn build_examples(
    samples: Vec<(Sample, Vec<Volume>)>,
    vocab: &Vocabulary,
    lexicon: &Lexicon,
    n_queries: usize,
) -> Result<Vec<TrainExample>> {
    samples
        .into_iter()
        .map(|(s, volumes)| {
            let seq = assign_weights(&s, vocab, lexicon, n_queries)?;
            Ok(TrainExample { id: s.id, seq, volumes })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub phase: u8,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub trace: Vec<LossRecord>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,phase,loss\n");
        for r in &self.trace {
            writeln!(out, "{},{},{}", r.step, r.phase, r.loss).expect("write to string");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.trace.last().map(|r| r.loss)
    }
}

/// Builds one example's loss on a fresh tape.
pub fn example_loss(model: &Model, example: &TrainExample) -> Result<(Tape, Var)> {
    let mut tape = Tape::new();
    let prepared = example.volumes.iter().map(|v| model.prepare(v)).collect::<Result<Vec<_>>>()?;
    let visual = model.visual_on_tape(&mut tape, &prepared)?;
    let (logits, _) = model.logits_on_tape(&mut tape, &example.seq.ids, &visual)?;
    let loss = sequence_loss(&mut tape, logits, &example.seq)?;
    Ok((tape, loss))
}

pub fn train(
    model: &mut Model,
    corpus: &TrainCorpus,
    schedule: &TrainSchedule,
    optimizer: &AdamWConfig,
    seed: u64,
) -> Result<TrainReport> {
    train_with(model, corpus, schedule, optimizer, seed, |_, _| {})
}

/// Two-stage training. Epochs before `pretrain_epochs` draw from the
/// pretrain split and the rest from finetune; the LM body is frozen during
/// the first `phase1_epochs` when `freeze_lm_in_phase1` is set. Each step
/// averages the per-example losses of its batch. `on_step` sees every
/// trace record as it is produced, with the model right after that update.
pub fn train_with(
    model: &mut Model,
    corpus: &TrainCorpus,
    schedule: &TrainSchedule,
    optimizer: &AdamWConfig,
    seed: u64,
    mut on_step: impl FnMut(&LossRecord, &Model),
) -> Result<TrainReport> {
    schedule.validate()?;
    if corpus.pretrain.is_empty() && corpus.finetune.is_empty() {
        return Err(Error::data("training corpus is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = TrainReport::default();
    let mut step = 0usize;
    let per_step = schedule.batch_size * schedule.grad_accum;
    let body = LMConfig::body_prefixes();
    let total_steps = schedule.planned_steps(corpus.pretrain.len(), corpus.finetune.len());

    'epochs: for epoch in 0..schedule.total_epochs {
        let phase: u8 = if schedule.freeze_lm_in_phase1 && epoch < schedule.phase1_epochs { 1 } else { 2 };
        model.params.set_frozen_by_prefix(&body, phase == 1);
        let split = if epoch < schedule.pretrain_epochs { &corpus.pretrain } else { &corpus.finetune };
        let mut order: Vec<usize> = (0..split.len()).collect();
        order.shuffle(&mut rng);

        for batch in order.chunks(per_step) {
            if schedule.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            model.params.zero_grads();
            let shared: &Model = model;
            let results: Vec<(Tape, Var)> = batch
                .par_iter()
                .map(|&i| {
                    let (mut tape, loss) = example_loss(shared, &split[i])?;
                    tape.backward(loss)?;
                    Ok((tape, loss))
                })
                .collect::<Result<_>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut total = 0.0;
            for (tape, loss) in results {
                total += tape.value(loss).data()[0];
                model.params.accumulate_grads(&tape, scale);
            }
            step += 1;
            if let Some(max) = schedule.max_grad_norm {
                model.params.clip_grad_norm(max);
            }
            let cfg = AdamWConfig { lr: optimizer.lr * schedule.lr_factor(step, total_steps), ..*optimizer };
            adamw_step(&mut model.params, &cfg, step as u64)?;
            let record = LossRecord { step, phase, loss: total * scale };
            on_step(&record, model);
            report.trace.push(record);
            if let Some(limit) = schedule.stop_below {
                let tail = &report.trace[report.trace.len().saturating_sub(10)..];
                if tail.len() == 10 && tail.iter().map(|r| r.loss).sum::<f64>() / 10.0 < limit {
                    break 'epochs;
                }
            }
        }
    }
    model.params.set_frozen_by_prefix(&body, false);
    Ok(report)
}

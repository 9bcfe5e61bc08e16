//! The assembled model: vision encoder, perceiver resampler and causal LM
//! over a shared parameter store, with generation and checkpoint I/O.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::language::{self, assemble, forward_lm, greedy_decode, plan_layout, LMConfig, Layout, Vocabulary, BOS};
use crate::numerics::{ModelParams, Tape, Tensor, Var};
use crate::perceiver::{self, PerceiverConfig};
use crate::vision::{self, VisionConfig};
use crate::volume::{preprocess_with, PreprocessConfig, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vision: VisionConfig,
    pub perceiver: PerceiverConfig,
    pub lm: LMConfig,
    pub preprocess: PreprocessConfig,
}

impl Default for ModelConfig {
    /// Desk scale: trains on one CPU core in minutes.
    fn default() -> Self {
        ModelConfig {
            vision: VisionConfig { dim: 32, layers: 1, heads: 4, mlp_ratio: 2, ..VisionConfig::default() },
            perceiver: PerceiverConfig { layers: 1, dim: 64, heads: 4, mlp_ratio: 2, ..PerceiverConfig::default() },
            lm: LMConfig { dim: 64, layers: 2, heads: 4, mlp_ratio: 2, max_len: 128, ..LMConfig::default() },
            preprocess: PreprocessConfig { size_2d: 128, size_3d: 64 },
        }
    }
}

impl ModelConfig {
    /// Smallest configuration that still exercises every component.
    pub fn toy() -> Self {
        ModelConfig {
            vision: VisionConfig { patch_h: 4, patch_w: 4, patch_d: 4, dim: 8, layers: 1, heads: 2, mlp_ratio: 2, ..VisionConfig::default() },
            perceiver: PerceiverConfig { n_queries: 4, layers: 1, dim: 16, heads: 2, mlp_ratio: 2, ..PerceiverConfig::default() },
            lm: LMConfig { dim: 16, layers: 1, heads: 2, mlp_ratio: 2, max_len: 64, ..LMConfig::default() },
            preprocess: PreprocessConfig { size_2d: 8, size_3d: 8 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.vision.validate()?;
        self.perceiver.validate()?;
        if self.perceiver.dim != self.lm.dim {
            return Err(Error::invalid(format!(
                "perceiver dim {} must equal lm dim {}",
                self.perceiver.dim, self.lm.dim
            )));
        }
        let (ph, pw) = (self.vision.patch_h, self.vision.patch_w);
        for (name, s) in [("size_2d", self.preprocess.size_2d), ("size_3d", self.preprocess.size_3d)] {
            if s == 0 || s % ph != 0 || s % pw != 0 {
                return Err(Error::invalid(format!("preprocess {name} {s} is not a multiple of the patch size")));
            }
        }
        Ok(())
    }
}

/// Parameters plus everything needed to interpret them.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ModelParams,
}

/// Sidecar paths written next to a checkpoint.
pub fn sidecar_paths(ckpt: &Path) -> (PathBuf, PathBuf) {
    let with = |ext: &str| {
        let mut s = ckpt.as_os_str().to_owned();
        s.push(ext);
        PathBuf::from(s)
    };
    (with(".config.json"), with(".vocab.txt"))
}

impl Model {
    /// Fresh model; the LM vocabulary size is taken from `vocab`.
    pub fn new(mut config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.lm.vocab_size = vocab.len();
        config.validate()?;
        config.lm.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::new();
        vision::init_params(&mut params, &config.vision, &mut rng);
        perceiver::init_params(&mut params, &config.perceiver, config.vision.dim, &mut rng);
        language::init_params(&mut params, &config.lm, &mut rng);
        Ok(Model { config, vocab, params })
    }

    pub fn n_queries(&self) -> usize {
        self.config.perceiver.n_queries
    }

    /// Applies this model's preprocessing to a raw volume.
    pub fn prepare(&self, raw: &Volume) -> Result<Volume> {
        preprocess_with(raw, &self.config.preprocess)
    }

    /// Resampled `n_queries × dim` embedding of each prepared volume.
    pub fn visual_on_tape(&self, tape: &mut Tape, volumes: &[Volume]) -> Result<Vec<Var>> {
        volumes
            .iter()
            .map(|v| {
                let tokens = vision::encode_on_tape(tape, &self.params, v, &self.config.vision, None)?;
                perceiver::resample_on_tape(tape, &self.params, tokens, &self.config.perceiver)
            })
            .collect()
    }

    /// Logits for the interleaved sequence of `ids` with the given visual
    /// embeddings.
    pub fn logits_on_tape(&self, tape: &mut Tape, ids: &[u32], visual: &[Var]) -> Result<(Var, Layout)> {
        let layout = plan_layout(ids, &self.vocab, self.n_queries(), visual.len())?;
        let seq = assemble(tape, &self.params, layout, visual, self.config.lm.max_len)?;
        let logits = forward_lm(tape, &self.params, seq.embeddings, &self.config.lm)?;
        Ok((logits, seq.layout))
    }

    /// Visual embeddings as plain tensors, for decoding.
    pub fn visual_tensors(&self, volumes: &[Volume]) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let vars = self.visual_on_tape(&mut tape, volumes)?;
        Ok(vars.into_iter().map(|v| tape.value(v).clone()).collect())
    }

    /// Greedy continuation of `prompt` given prepared volumes; returns the
    /// generated ids.
    pub fn generate_ids(&self, prompt: &str, volumes: &[Volume], max_new: usize) -> Result<Vec<u32>> {
        let visual = self.visual_tensors(volumes)?;
        let mut ids = vec![BOS];
        ids.extend(self.vocab.encode(prompt));
        greedy_decode(&ids, max_new, &self.vocab, |seq| {
            let mut tape = Tape::new();
            let vis: Vec<Var> = visual.iter().map(|t| tape.constant(t.clone())).collect();
            let (logits, _) = self.logits_on_tape(&mut tape, seq, &vis)?;
            let value = tape.value(logits);
            let (rows, _) = value.dims2()?;
            Ok(value.row(rows - 1).to_vec())
        })
    }

    /// Greedy continuation of `prompt` as text. Generation stops early when
    /// the sequence would exceed the LM context.
    pub fn generate(&self, prompt: &str, volumes: &[Volume], max_new: usize) -> Result<String> {
        let prompt_slots = 1 + self.vocab.encode(prompt).len() + volumes.len() * (self.n_queries() + 1);
        let room = self.config.lm.max_len.saturating_sub(prompt_slots);
        let ids = self.generate_ids(prompt, volumes, max_new.min(room))?;
        Ok(self.vocab.detokenize(&ids))
    }

    /// Writes the checkpoint plus config and vocabulary sidecars.
    pub fn save(&self, ckpt: &Path) -> Result<()> {
        self.params.write_checkpoint(BufWriter::new(File::create(ckpt)?))?;
        let (config, vocab) = sidecar_paths(ckpt);
        std::fs::write(config, serde_json::to_string_pretty(&self.config)? + "\n")?;
        self.vocab.save(&vocab)
    }

    pub fn load(ckpt: &Path) -> Result<Self> {
        let (config_path, vocab_path) = sidecar_paths(ckpt);
        let config: ModelConfig = serde_json::from_str(&std::fs::read_to_string(&config_path)?)
            .map_err(|e| Error::format(format!("{}: {e}", config_path.display())))?;
        let vocab = Vocabulary::load(&vocab_path)?;
        let params = ModelParams::read_checkpoint(BufReader::new(File::open(ckpt)?))?;
        if config.lm.vocab_size != vocab.len() {
            return Err(Error::format(format!(
                "checkpoint vocabulary has {} entries, config expects {}",
                vocab.len(),
                config.lm.vocab_size
            )));
        }
        let reference = Model::new(config, vocab.clone(), 0)?;
        for (name, p) in reference.params.iter() {
            let got = params.tensor(name).map_err(|_| Error::format(format!("checkpoint lacks {name}")))?;
            if got.shape() != p.tensor.shape() {
                return Err(Error::format(format!("{name}: shape {:?}, expected {:?}", got.shape(), p.tensor.shape())));
            }
        }
        if params.len() != reference.params.len() {
            return Err(Error::format("checkpoint has unexpected tensors"));
        }
        Ok(Model { config, vocab, params })
    }
}

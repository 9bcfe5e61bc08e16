use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn;
use crate::numerics::{ModelParams, Tape, Var};

pub const PREFIX: &str = "lm";
pub const TOK_EMB: &str = "lm.tok_emb";
pub const POS_EMB: &str = "lm.pos_emb";
const HEAD: &str = "lm.head";

/// Decoder-only causal transformer shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LMConfig {
    /// Filled in from the vocabulary when the model is built.
    pub vocab_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub max_len: usize,
    /// Reuse the token embedding table as the output projection.
    pub tie_weights: bool,
}

impl Default for LMConfig {
    fn default() -> Self {
        LMConfig { vocab_size: 0, dim: 128, layers: 4, heads: 4, mlp_ratio: 4, max_len: 256, tie_weights: true }
    }
}

impl LMConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::invalid(format!("lm dim {} not divisible by {} heads", self.dim, self.heads)));
        }
        if self.vocab_size == 0 || self.max_len == 0 {
            return Err(Error::invalid("lm vocab_size and max_len must be positive"));
        }
        Ok(())
    }

    /// Parameter-name prefixes of the transformer body (everything the
    /// first training phase keeps frozen).
    pub fn body_prefixes() -> [&'static str; 2] {
        ["lm.block", "lm.ln_f"]
    }
}

pub fn init_params(params: &mut ModelParams, cfg: &LMConfig, rng: &mut impl Rng) {
    params.insert_normal(TOK_EMB, &[cfg.vocab_size, cfg.dim], nn::INIT_STD, rng);
    params.insert_normal(POS_EMB, &[cfg.max_len, cfg.dim], nn::INIT_STD, rng);
    for l in 0..cfg.layers {
        nn::init_block(params, &format!("{PREFIX}.block{l}"), cfg.dim, cfg.mlp_ratio, rng);
    }
    nn::init_layer_norm(params, &format!("{PREFIX}.ln_f"), cfg.dim);
    if !cfg.tie_weights {
        params.insert_normal(&format!("{HEAD}.w"), &[cfg.dim, cfg.vocab_size], nn::INIT_STD, rng);
    }
}

/// Causal forward pass over `L × dim` input embeddings; returns `L × V`
/// logits where row `l` depends only on rows `<= l`.
pub fn forward_lm(tape: &mut Tape, params: &ModelParams, embeddings: Var, cfg: &LMConfig) -> Result<Var> {
    let (len, dim) = tape.value(embeddings).dims2()?;
    if len > cfg.max_len {
        return Err(Error::data(format!("sequence of {len} exceeds max_len {}", cfg.max_len)));
    }
    if dim != cfg.dim {
        return Err(Error::shape(format!("embedding width {dim} does not match lm dim {}", cfg.dim)));
    }
    let table = tape.param(params, POS_EMB)?;
    let positions: Vec<usize> = (0..len).collect();
    let pos = tape.gather_rows(table, &positions)?;
    let mut x = tape.add(embeddings, pos)?;
    for l in 0..cfg.layers {
        x = nn::block(tape, params, &format!("{PREFIX}.block{l}"), x, cfg.heads, true, None)?;
    }
    let h = nn::layer_norm(tape, params, &format!("{PREFIX}.ln_f"), x)?;
    let proj = if cfg.tie_weights {
        let emb = tape.param(params, TOK_EMB)?;
        tape.transpose(emb)?
    } else {
        tape.param(params, &format!("{HEAD}.w"))?
    };
    tape.matmul(h, proj)
}

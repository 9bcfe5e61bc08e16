//! Cross-attention resampler: a fixed set of learnable queries attends over a
//! variable-length patch sequence, so every image leaves as `n_queries × dim`.
//!
//! Keys and values carry no positional term here (positions were added by the
//! vision encoder), which makes the output invariant to the order of the
//! input tokens.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn;
use crate::numerics::{ModelParams, Tape, Tensor, Var};

pub const PREFIX: &str = "per";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerceiverConfig {
    pub n_queries: usize,
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Adds one self-attention step among the queries in every layer.
    pub query_self_attention: bool,
}

impl Default for PerceiverConfig {
    fn default() -> Self {
        PerceiverConfig { n_queries: 32, layers: 2, dim: 128, heads: 4, mlp_ratio: 4, query_self_attention: false }
    }
}

impl PerceiverConfig {
    /// Six layers of width 5120.
    pub fn full_scale() -> Self {
        PerceiverConfig { layers: 6, dim: 5120, heads: 40, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_queries == 0 {
            return Err(Error::invalid("perceiver needs at least one query"));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::invalid(format!(
                "perceiver dim {} not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }
}

pub fn init_params(params: &mut ModelParams, cfg: &PerceiverConfig, input_dim: usize, rng: &mut impl Rng) {
    nn::init_linear(params, &format!("{PREFIX}.in_proj"), input_dim, cfg.dim, rng);
    params.insert_normal(&format!("{PREFIX}.queries"), &[cfg.n_queries, cfg.dim], nn::INIT_STD, rng);
    for l in 0..cfg.layers {
        let name = format!("{PREFIX}.layer{l}");
        nn::init_layer_norm(params, &format!("{name}.ln_q"), cfg.dim);
        nn::init_layer_norm(params, &format!("{name}.ln_kv"), cfg.dim);
        nn::init_attention(params, &format!("{name}.xattn"), cfg.dim, cfg.dim, rng);
        if cfg.query_self_attention {
            nn::init_layer_norm(params, &format!("{name}.ln_self"), cfg.dim);
            nn::init_attention(params, &format!("{name}.self_attn"), cfg.dim, cfg.dim, rng);
        }
        nn::init_layer_norm(params, &format!("{name}.ln_mlp"), cfg.dim);
        nn::init_mlp(params, &format!("{name}.mlp"), cfg.dim, cfg.dim * cfg.mlp_ratio, rng);
    }
    nn::init_layer_norm(params, &format!("{PREFIX}.ln_f"), cfg.dim);
}

/// Records the resampler on `tape`; returns `n_queries × dim`.
pub fn resample_on_tape(tape: &mut Tape, params: &ModelParams, tokens: Var, cfg: &PerceiverConfig) -> Result<Var> {
    let (rows, _) = tape.value(tokens).dims2()?;
    if rows == 0 {
        return Err(Error::shape("perceiver needs at least one patch token"));
    }
    let context = nn::linear(tape, params, &format!("{PREFIX}.in_proj"), tokens)?;
    let mut latents = tape.param(params, &format!("{PREFIX}.queries"))?;
    for l in 0..cfg.layers {
        let name = format!("{PREFIX}.layer{l}");
        let q = nn::layer_norm(tape, params, &format!("{name}.ln_q"), latents)?;
        let kv = nn::layer_norm(tape, params, &format!("{name}.ln_kv"), context)?;
        let att = nn::attention(tape, params, &format!("{name}.xattn"), q, kv, cfg.heads, false)?;
        latents = tape.add(latents, att.out)?;
        if cfg.query_self_attention {
            let h = nn::layer_norm(tape, params, &format!("{name}.ln_self"), latents)?;
            let att = nn::attention(tape, params, &format!("{name}.self_attn"), h, h, cfg.heads, false)?;
            latents = tape.add(latents, att.out)?;
        }
        let h = nn::layer_norm(tape, params, &format!("{name}.ln_mlp"), latents)?;
        let m = nn::mlp(tape, params, &format!("{name}.mlp"), h)?;
        latents = tape.add(latents, m)?;
    }
    nn::layer_norm(tape, params, &format!("{PREFIX}.ln_f"), latents)
}

/// Resamples a `P × d_vis` token matrix to `n_queries × dim`.
pub fn resample(tokens: &Tensor, params: &ModelParams, cfg: &PerceiverConfig) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(tokens.clone());
    let out = resample_on_tape(&mut tape, params, x, cfg)?;
    Ok(tape.value(out).clone())
}

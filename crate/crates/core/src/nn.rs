//! Transformer building blocks shared by the vision encoder, the perceiver
//! and the language model. Parameters live in [`ModelParams`] under a dotted
//! name prefix; forward functions record onto a [`Tape`].

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{ModelParams, Tape, Tensor, Var};

/// Embedding tables and learned queries.
pub const INIT_STD: f64 = 0.02;
pub const LN_EPS: f64 = 1e-5;

/// Weights are drawn with std `1/sqrt(fan_in)`, biases start at zero.
pub fn init_linear(params: &mut ModelParams, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
    params.insert_normal(&format!("{name}.w"), &[fan_in, fan_out], (fan_in as f64).powf(-0.5), rng);
    params.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]));
}

/// `x · W + b`.
pub fn linear(tape: &mut Tape, params: &ModelParams, name: &str, x: Var) -> Result<Var> {
    let w = tape.param(params, &format!("{name}.w"))?;
    let b = tape.param(params, &format!("{name}.b"))?;
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

pub fn init_layer_norm(params: &mut ModelParams, name: &str, dim: usize) {
    params.insert(format!("{name}.g"), Tensor::filled(&[dim], 1.0));
    params.insert(format!("{name}.b"), Tensor::zeros(&[dim]));
}

pub fn layer_norm(tape: &mut Tape, params: &ModelParams, name: &str, x: Var) -> Result<Var> {
    let g = tape.param(params, &format!("{name}.g"))?;
    let b = tape.param(params, &format!("{name}.b"))?;
    tape.layer_norm(x, g, b, LN_EPS)
}

/// Query/key/value/output projections for multi-head attention.
pub fn init_attention(params: &mut ModelParams, name: &str, dim: usize, kv_dim: usize, rng: &mut impl Rng) {
    init_linear(params, &format!("{name}.q"), dim, dim, rng);
    init_linear(params, &format!("{name}.k"), kv_dim, dim, rng);
    init_linear(params, &format!("{name}.v"), kv_dim, dim, rng);
    init_linear(params, &format!("{name}.o"), dim, dim, rng);
}

/// Output of [`attention`]: the projected result plus the per-head attention
/// probability matrices (rows = queries).
pub struct Attended {
    pub out: Var,
    pub probs: Vec<Var>,
}

/// Scaled dot-product multi-head attention of `queries` over `context`.
/// With `causal`, query `i` only sees context rows `<= i`.
pub fn attention(
    tape: &mut Tape,
    params: &ModelParams,
    name: &str,
    queries: Var,
    context: Var,
    heads: usize,
    causal: bool,
) -> Result<Attended> {
    let q = linear(tape, params, &format!("{name}.q"), queries)?;
    let k = linear(tape, params, &format!("{name}.k"), context)?;
    let v = linear(tape, params, &format!("{name}.v"), context)?;
    let dim = tape.shape(q)[1];
    if heads == 0 || dim % heads != 0 {
        return Err(Error::invalid(format!("dim {dim} not divisible by {heads} heads")));
    }
    let head_dim = dim / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
        let qh = tape.slice_cols(q, lo, hi)?;
        let kh = tape.slice_cols(k, lo, hi)?;
        let vh = tape.slice_cols(v, lo, hi)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let mut scores = tape.scale(scores, scale);
        if causal {
            scores = tape.causal_mask(scores)?;
        }
        let p = tape.softmax(scores, 1)?;
        outs.push(tape.matmul(p, vh)?);
        probs.push(p);
    }
    let merged = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    let out = linear(tape, params, &format!("{name}.o"), merged)?;
    Ok(Attended { out, probs })
}

pub fn init_mlp(params: &mut ModelParams, name: &str, dim: usize, hidden: usize, rng: &mut impl Rng) {
    init_linear(params, &format!("{name}.fc1"), dim, hidden, rng);
    init_linear(params, &format!("{name}.fc2"), hidden, dim, rng);
}

pub fn mlp(tape: &mut Tape, params: &ModelParams, name: &str, x: Var) -> Result<Var> {
    let h = linear(tape, params, &format!("{name}.fc1"), x)?;
    let h = tape.gelu(h);
    linear(tape, params, &format!("{name}.fc2"), h)
}

/// Pre-norm self-attention block: `x + attn(ln1(x))`, then `x + mlp(ln2(x))`.
pub fn init_block(params: &mut ModelParams, name: &str, dim: usize, mlp_ratio: usize, rng: &mut impl Rng) {
    init_layer_norm(params, &format!("{name}.ln1"), dim);
    init_attention(params, &format!("{name}.attn"), dim, dim, rng);
    init_layer_norm(params, &format!("{name}.ln2"), dim);
    init_mlp(params, &format!("{name}.mlp"), dim, dim * mlp_ratio, rng);
}

pub fn block(
    tape: &mut Tape,
    params: &ModelParams,
    name: &str,
    x: Var,
    heads: usize,
    causal: bool,
    attn_probs: Option<&mut Vec<Var>>,
) -> Result<Var> {
    let h = layer_norm(tape, params, &format!("{name}.ln1"), x)?;
    let att = attention(tape, params, &format!("{name}.attn"), h, h, heads, causal)?;
    if let Some(sink) = attn_probs {
        sink.extend(att.probs);
    }
    let x = tape.add(x, att.out)?;
    let h = layer_norm(tape, params, &format!("{name}.ln2"), x)?;
    let m = mlp(tape, params, &format!("{name}.mlp"), h)?;
    tape.add(x, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::check_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn causal_block_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut params = ModelParams::new();
        init_block(&mut params, "blk", 8, 2, &mut rng);
        // Larger weights than the default init make the check meaningful.
        params.insert_normal("x", &[5, 8], 1.0, &mut rng);
        for (_, p) in params.iter_mut() {
            p.tensor.data_mut().iter_mut().for_each(|v| *v *= 10.0);
        }
        let report = check_params(
            &params,
            |tape, p| {
                let x = tape.param(p, "x")?;
                let y = block(tape, p, "blk", x, 2, true, None)?;
                let sq = tape.mul(y, y)?;
                Ok(tape.sum(sq))
            },
            Some(12),
            1,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn attention_rows_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = ModelParams::new();
        init_attention(&mut params, "a", 8, 6, &mut rng);
        params.insert_normal("q", &[4, 8], 1.0, &mut rng);
        params.insert_normal("c", &[7, 6], 1.0, &mut rng);
        let mut tape = Tape::new();
        let q = tape.param(&params, "q").unwrap();
        let c = tape.param(&params, "c").unwrap();
        let att = attention(&mut tape, &params, "a", q, c, 4, false).unwrap();
        assert_eq!(tape.shape(att.out), &[4, 8]);
        assert_eq!(att.probs.len(), 4);
        for p in att.probs {
            let t = tape.value(p);
            for r in 0..4 {
                assert!((t.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}

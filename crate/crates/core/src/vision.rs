//! 3D patch embedding, factorized learnable position tables and a pre-norm
//! ViT. Every volume is encoded on its own into `P_i × dim` tokens with
//! `P_i = (H/ph)(W/pw)(D/pd)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn;
use crate::numerics::{ModelParams, Tape, Tensor, Var};
use crate::volume::Volume;

pub const PREFIX: &str = "vis";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VisionConfig {
    pub patch_h: usize,
    pub patch_w: usize,
    pub patch_d: usize,
    pub channels: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub max_pos_h: usize,
    pub max_pos_w: usize,
    pub max_pos_d: usize,
}

impl Default for VisionConfig {
    fn default() -> Self {
        VisionConfig {
            patch_h: 32,
            patch_w: 32,
            patch_d: 4,
            channels: 1,
            dim: 64,
            layers: 2,
            heads: 4,
            mlp_ratio: 4,
            max_pos_h: 16,
            max_pos_w: 16,
            max_pos_d: 16,
        }
    }
}

impl VisionConfig {
    /// The full-size encoder: 12 layers of width 768.
    pub fn full_scale() -> Self {
        VisionConfig { dim: 768, layers: 12, heads: 12, ..Self::default() }
    }

    pub fn patch_len(&self) -> usize {
        self.patch_h * self.patch_w * self.patch_d * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::invalid(format!(
                "vision dim {} not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        let all = [
            self.patch_h, self.patch_w, self.patch_d, self.channels, self.dim, self.mlp_ratio,
            self.max_pos_h, self.max_pos_w, self.max_pos_d,
        ];
        if all.iter().any(|&v| v == 0) {
            return Err(Error::invalid("vision config sizes must be positive"));
        }
        Ok(())
    }
}

/// Token grid of one volume.
#[derive(Debug, Clone, Copy)]
pub struct PatchGrid {
    pub n_h: usize,
    pub n_w: usize,
    pub n_d: usize,
    /// `P × dim` tokens, ordered height-major then width then depth.
    pub tokens: Var,
}

impl PatchGrid {
    pub fn num_tokens(&self) -> usize {
        self.n_h * self.n_w * self.n_d
    }
}

/// Grid extents for a volume of the given dims, or an error naming the axis
/// that the patch size does not divide.
pub fn grid_dims(dims: [usize; 4], cfg: &VisionConfig) -> Result<(usize, usize, usize)> {
    let [h, w, d, c] = dims;
    if c != cfg.channels {
        return Err(Error::shape(format!("volume has {c} channels, encoder expects {}", cfg.channels)));
    }
    for (axis, size, patch) in [("height", h, cfg.patch_h), ("width", w, cfg.patch_w), ("depth", d, cfg.patch_d)] {
        if size % patch != 0 {
            return Err(Error::shape(format!("{axis} {size} is not divisible by patch size {patch}")));
        }
    }
    Ok((h / cfg.patch_h, w / cfg.patch_w, d / cfg.patch_d))
}

/// Cuts non-overlapping `ph×pw×pd×C` blocks and flattens each into a row.
pub fn extract_patches(v: &Volume, cfg: &VisionConfig) -> Result<((usize, usize, usize), Tensor)> {
    let (n_h, n_w, n_d) = grid_dims(v.dims(), cfg)?;
    let plen = cfg.patch_len();
    let c = v.channels();
    let mut rows = Vec::with_capacity(n_h * n_w * n_d * plen);
    for gi in 0..n_h {
        for gj in 0..n_w {
            for gk in 0..n_d {
                for a in 0..cfg.patch_h {
                    for b in 0..cfg.patch_w {
                        let i = gi * cfg.patch_h + a;
                        let j = gj * cfg.patch_w + b;
                        let k0 = gk * cfg.patch_d;
                        let start = v.index(i, j, k0, 0);
                        rows.extend_from_slice(&v.voxels()[start..start + cfg.patch_d * c]);
                    }
                }
            }
        }
    }
    let t = Tensor::new(vec![n_h * n_w * n_d, plen], rows)?;
    Ok(((n_h, n_w, n_d), t))
}

pub fn init_params(params: &mut ModelParams, cfg: &VisionConfig, rng: &mut impl Rng) {
    nn::init_linear(params, &format!("{PREFIX}.patch"), cfg.patch_len(), cfg.dim, rng);
    // Position tables start at the scale of the patch projection so pooled
    // tokens still carry where they came from.
    let pos_std = (cfg.dim as f64).powf(-0.5);
    params.insert_normal(&format!("{PREFIX}.pos_h"), &[cfg.max_pos_h, cfg.dim], pos_std, rng);
    params.insert_normal(&format!("{PREFIX}.pos_w"), &[cfg.max_pos_w, cfg.dim], pos_std, rng);
    params.insert_normal(&format!("{PREFIX}.pos_d"), &[cfg.max_pos_d, cfg.dim], pos_std, rng);
    for l in 0..cfg.layers {
        nn::init_block(params, &format!("{PREFIX}.block{l}"), cfg.dim, cfg.mlp_ratio, rng);
    }
    nn::init_layer_norm(params, &format!("{PREFIX}.ln_f"), cfg.dim);
}

/// Patch extraction followed by the learned linear projection to `dim`.
pub fn patchify(tape: &mut Tape, params: &ModelParams, v: &Volume, cfg: &VisionConfig) -> Result<PatchGrid> {
    let ((n_h, n_w, n_d), patches) = extract_patches(v, cfg)?;
    let x = tape.constant(patches);
    let tokens = nn::linear(tape, params, &format!("{PREFIX}.patch"), x)?;
    Ok(PatchGrid { n_h, n_w, n_d, tokens })
}

/// Adds `pos_h[i] + pos_w[j] + pos_d[k]` to the token at grid cell `(i, j, k)`.
pub fn add_position(tape: &mut Tape, params: &ModelParams, grid: PatchGrid, cfg: &VisionConfig) -> Result<PatchGrid> {
    for (axis, n, max) in [("height", grid.n_h, cfg.max_pos_h), ("width", grid.n_w, cfg.max_pos_w), ("depth", grid.n_d, cfg.max_pos_d)] {
        if n > max {
            return Err(Error::shape(format!("{axis} grid {n} exceeds position table size {max}")));
        }
    }
    let p = grid.num_tokens();
    let mut idx_h = Vec::with_capacity(p);
    let mut idx_w = Vec::with_capacity(p);
    let mut idx_d = Vec::with_capacity(p);
    for i in 0..grid.n_h {
        for j in 0..grid.n_w {
            for k in 0..grid.n_d {
                idx_h.push(i);
                idx_w.push(j);
                idx_d.push(k);
            }
        }
    }
    let th = tape.param(params, &format!("{PREFIX}.pos_h"))?;
    let tw = tape.param(params, &format!("{PREFIX}.pos_w"))?;
    let td = tape.param(params, &format!("{PREFIX}.pos_d"))?;
    let ph = tape.gather_rows(th, &idx_h)?;
    let pw = tape.gather_rows(tw, &idx_w)?;
    let pd = tape.gather_rows(td, &idx_d)?;
    let pos = tape.add(ph, pw)?;
    let pos = tape.add(pos, pd)?;
    let tokens = tape.add(grid.tokens, pos)?;
    Ok(PatchGrid { tokens, ..grid })
}

/// Records the full encoder on `tape`; returns `P_i × dim` tokens.
/// Attention probabilities of every head are pushed to `attn_probs` when given.
pub fn encode_on_tape(
    tape: &mut Tape,
    params: &ModelParams,
    v: &Volume,
    cfg: &VisionConfig,
    mut attn_probs: Option<&mut Vec<Var>>,
) -> Result<Var> {
    let grid = patchify(tape, params, v, cfg)?;
    let grid = add_position(tape, params, grid, cfg)?;
    let mut x = grid.tokens;
    for l in 0..cfg.layers {
        x = nn::block(tape, params, &format!("{PREFIX}.block{l}"), x, cfg.heads, false, attn_probs.as_deref_mut())?;
    }
    nn::layer_norm(tape, params, &format!("{PREFIX}.ln_f"), x)
}

/// Encodes one preprocessed volume.
pub fn encode(v: &Volume, params: &ModelParams, cfg: &VisionConfig) -> Result<Tensor> {
    let mut tape = Tape::new();
    let out = encode_on_tape(&mut tape, params, v, cfg, None)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::check_params;
    use crate::volume::Modality;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> VisionConfig {
        VisionConfig { dim: 8, layers: 1, heads: 2, mlp_ratio: 2, ..VisionConfig::default() }
    }

    #[test]
    fn token_counts_for_full_size_inputs() {
        let cfg = VisionConfig::default();
        assert_eq!(grid_dims([512, 512, 4, 1], &cfg).unwrap(), (16, 16, 1));
        assert_eq!(grid_dims([256, 256, 64, 1], &cfg).unwrap(), (8, 8, 16));
        let err = grid_dims([512, 500, 4, 1], &cfg).unwrap_err().to_string();
        assert!(err.contains("width"), "{err}");
        let err = grid_dims([64, 64, 6, 1], &cfg).unwrap_err().to_string();
        assert!(err.contains("depth"), "{err}");
    }

    #[test]
    fn patch_rows_hold_their_blocks() {
        let cfg = small_cfg();
        let v = Volume::from_fn([64, 32, 8, 1], Modality::Ct, false, |i, j, k, _| (i * 10_000 + j * 100 + k) as f64).unwrap();
        let ((nh, nw, nd), t) = extract_patches(&v, &cfg).unwrap();
        assert_eq!((nh, nw, nd), (2, 1, 2));
        // Patch index 3 = grid (1, 0, 1); its first element is voxel (32, 0, 4).
        assert_eq!(t.row(3)[0], v.get(32, 0, 4, 0));
        // Element (a=1, b=2, c=3) sits at ((1 * 32 + 2) * 4 + 3).
        assert_eq!(t.row(3)[(32 + 2) * 4 + 3], v.get(33, 2, 7, 0));
    }

    #[test]
    fn zero_volume_with_zero_bias_gives_zero_tokens() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ModelParams::new();
        init_params(&mut params, &cfg, &mut rng);
        let v = Volume::filled([64, 64, 4, 1], 0.0, Modality::Ct, true).unwrap();
        let mut tape = Tape::new();
        let g = patchify(&mut tape, &params, &v, &cfg).unwrap();
        assert_eq!(g.num_tokens(), 4);
        assert!(tape.value(g.tokens).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn position_tables_are_additive() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = ModelParams::new();
        init_params(&mut params, &cfg, &mut rng);
        let v = Volume::from_fn([32, 32, 12, 1], Modality::Ct, false, |i, j, k, _| ((i + 2 * j + 3 * k) % 7) as f64).unwrap();

        let mut tape = Tape::new();
        let g = patchify(&mut tape, &params, &v, &cfg).unwrap();
        let before = tape.value(g.tokens).clone();
        let g2 = add_position(&mut tape, &params, g, &cfg).unwrap();
        let after = tape.value(g2.tokens).clone();
        let pos_d = params.tensor("vis.pos_d").unwrap();
        // Tokens 0 and 2 share (i, j) = (0, 0) and have k = 0 and k = 2.
        for c in 0..cfg.dim {
            let lhs = (after.at2(0, c) - before.at2(0, c)) - (after.at2(2, c) - before.at2(2, c));
            let rhs = pos_d.at2(0, c) - pos_d.at2(2, c);
            assert!((lhs - rhs).abs() < 1e-15);
        }

        let mut zeroed = params.clone();
        for name in ["vis.pos_h", "vis.pos_w", "vis.pos_d"] {
            zeroed.get_mut(name).unwrap().tensor.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let mut tape = Tape::new();
        let g = patchify(&mut tape, &zeroed, &v, &cfg).unwrap();
        let before = tape.value(g.tokens).clone();
        let g2 = add_position(&mut tape, &zeroed, g, &cfg).unwrap();
        assert_eq!(tape.value(g2.tokens).data(), before.data());
    }

    #[test]
    fn grid_larger_than_tables_is_rejected() {
        let cfg = VisionConfig { max_pos_d: 2, ..small_cfg() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = ModelParams::new();
        init_params(&mut params, &cfg, &mut rng);
        let v = Volume::filled([32, 32, 12, 1], 0.5, Modality::Ct, false).unwrap();
        let mut tape = Tape::new();
        let g = patchify(&mut tape, &params, &v, &cfg).unwrap();
        assert!(add_position(&mut tape, &params, g, &cfg).is_err());
    }

    #[test]
    fn position_table_gradients_match_finite_differences() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = ModelParams::new();
        init_params(&mut params, &cfg, &mut rng);
        params.set_frozen_by_prefix(&["vis.patch", "vis.block", "vis.ln_f"], true);
        let v = Volume::from_fn([64, 32, 8, 1], Modality::Ct, false, |i, j, k, _| ((i * 3 + j + k) % 5) as f64 / 5.0).unwrap();
        let report = check_params(
            &params,
            |tape, p| {
                let g = patchify(tape, p, &v, &cfg)?;
                let g = add_position(tape, p, g, &cfg)?;
                let sq = tape.mul(g.tokens, g.tokens)?;
                Ok(tape.sum(sq))
            },
            None,
            3,
        )
        .unwrap();
        assert!(report.checked > 0);
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn encoder_output_shape_and_attention_rows() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut params = ModelParams::new();
        init_params(&mut params, &cfg, &mut rng);
        let v = Volume::from_fn([64, 64, 8, 1], Modality::Mri, false, |i, j, k, _| ((i ^ j) + k) as f64 / 200.0).unwrap();
        let mut tape = Tape::new();
        let mut probs = Vec::new();
        let out = encode_on_tape(&mut tape, &params, &v, &cfg, Some(&mut probs)).unwrap();
        assert_eq!(tape.shape(out), &[8, 8]);
        assert_eq!(probs.len(), cfg.layers * cfg.heads);
        for p in probs {
            let t = tape.value(p);
            for r in 0..t.shape()[0] {
                assert!((t.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}

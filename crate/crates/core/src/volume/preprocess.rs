use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Volume;

/// Slices a native 2D image is replicated into; equals the patch depth.
pub const EXPANDED_DEPTH: usize = 4;
pub const DEPTH_MULTIPLE: usize = 4;
pub const MAX_DEPTH: usize = 64;

/// In-plane resize targets. The defaults are the full-scale sizes; desk-scale
/// configs shrink them while keeping them multiples of the patch size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub size_2d: usize,
    pub size_3d: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { size_2d: 512, size_3d: 256 }
    }
}

/// Linearly maps voxels onto `[0, 1]`. A constant volume maps to all zeros.
pub fn min_max_normalize(v: &Volume) -> Volume {
    let (lo, hi) = v.min_max();
    let range = hi - lo;
    let mut out = v.clone();
    if range > 0.0 {
        for x in out.voxels_mut() {
            *x = (*x - lo) / range;
        }
    } else {
        out.voxels_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    out
}

/// Replicates a single-slice image into [`EXPANDED_DEPTH`] identical slices.
pub fn expand_2d(v: &Volume) -> Result<Volume> {
    if v.depth() != 1 {
        return Err(Error::invalid(format!(
            "expand_2d needs depth 1, volume already has depth {}",
            v.depth()
        )));
    }
    let [h, w, _, c] = v.dims();
    Volume::from_fn([h, w, EXPANDED_DEPTH, c], v.modality, v.is_native_2d, |i, j, _, ch| v.get(i, j, 0, ch))
}

/// Nearest multiple of 4 (ties round up), clamped to `[4, 64]`.
pub fn round_depth(d: usize) -> Result<usize> {
    if d < 1 {
        return Err(Error::invalid("depth must be at least 1"));
    }
    let nearest = (d + DEPTH_MULTIPLE / 2) / DEPTH_MULTIPLE * DEPTH_MULTIPLE;
    Ok(nearest.clamp(DEPTH_MULTIPLE, MAX_DEPTH))
}

/// Source sample for each output index under corner-aligned sampling:
/// (lower index, upper index, weight of the upper index).
fn axis_samples(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    (0..output)
        .map(|o| {
            let pos = if output == 1 {
                0.0
            } else {
                (o * (input - 1)) as f64 / (output - 1) as f64
            };
            let lo = (pos.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Trilinear, corner-aligned resize of the three spatial axes.
pub fn resize(v: &Volume, target_h: usize, target_w: usize, target_d: usize) -> Result<Volume> {
    if target_h == 0 || target_w == 0 || target_d == 0 {
        return Err(Error::invalid("resize targets must be >= 1"));
    }
    let [h, w, d, c] = v.dims();
    let sh = axis_samples(h, target_h);
    let sw = axis_samples(w, target_w);
    let sd = axis_samples(d, target_d);
    let mut voxels = Vec::with_capacity(target_h * target_w * target_d * c);
    for &(i0, i1, fi) in &sh {
        for &(j0, j1, fj) in &sw {
            for &(k0, k1, fk) in &sd {
                for ch in 0..c {
                    let lerp_k = |i: usize, j: usize| {
                        let a = v.get(i, j, k0, ch);
                        let b = v.get(i, j, k1, ch);
                        a + (b - a) * fk
                    };
                    let c00 = lerp_k(i0, j0);
                    let c01 = lerp_k(i0, j1);
                    let c10 = lerp_k(i1, j0);
                    let c11 = lerp_k(i1, j1);
                    let c0 = c00 + (c01 - c00) * fj;
                    let c1 = c10 + (c11 - c10) * fj;
                    voxels.push(c0 + (c1 - c0) * fi);
                }
            }
        }
    }
    Volume::new([target_h, target_w, target_d, c], voxels, v.modality, v.is_native_2d)
}

/// Full-size preprocessing: see [`preprocess_with`].
pub fn preprocess(v: &Volume) -> Result<Volume> {
    preprocess_with(v, &PreprocessConfig::default())
}

/// Normalize, expand native 2D images to 4 slices, resize (2D to
/// `size_2d²×4`, 3D to `size_3d²×round_depth(D)`), then normalize once more.
///
/// Interpolation can drop the extreme voxels, so the closing normalization
/// restores an exact `[0, 1]` range; it makes the pipeline idempotent.
pub fn preprocess_with(v: &Volume, cfg: &PreprocessConfig) -> Result<Volume> {
    let normalized = min_max_normalize(v);
    let resized = if v.is_native_2d {
        let expanded = if normalized.depth() == 1 { expand_2d(&normalized)? } else { normalized };
        resize(&expanded, cfg.size_2d, cfg.size_2d, EXPANDED_DEPTH)?
    } else {
        let depth = round_depth(normalized.depth())?;
        resize(&normalized, cfg.size_3d, cfg.size_3d, depth)?
    };
    Ok(min_max_normalize(&resized))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Modality;
    use proptest::prelude::*;

    fn brute_force_round_depth(d: usize) -> usize {
        // Scan all legal depths; nearest wins, larger wins ties.
        (1..=16usize)
            .map(|m| m * 4)
            .min_by(|&a, &b| {
                let da = a.abs_diff(d);
                let db = b.abs_diff(d);
                da.cmp(&db).then(b.cmp(&a))
            })
            .unwrap()
    }

    #[test]
    fn round_depth_examples() {
        assert_eq!(round_depth(70).unwrap(), 64);
        assert_eq!(round_depth(1).unwrap(), 4);
        assert_eq!(round_depth(10).unwrap(), 12);
        assert_eq!(round_depth(37).unwrap(), 36);
        assert!(round_depth(0).is_err());
        for d in 1..=100 {
            assert_eq!(round_depth(d).unwrap(), brute_force_round_depth(d), "d = {d}");
        }
    }

    #[test]
    fn normalize_examples() {
        let v = Volume::filled([2, 2, 1, 1], 7.0, Modality::Ct, true).unwrap();
        assert!(min_max_normalize(&v).voxels().iter().all(|&x| x == 0.0));

        let ramp = Volume::new([1, 256, 1, 1], (0..256).map(f64::from).collect(), Modality::Ct, true).unwrap();
        let n = min_max_normalize(&ramp);
        assert_eq!(n.voxels()[0], 0.0);
        assert_eq!(n.voxels()[255], 1.0);

        let v = Volume::new([1, 3, 1, 1], vec![10.0, 20.0, 30.0], Modality::Mri, true).unwrap();
        assert_eq!(min_max_normalize(&v).voxels()[1], 0.5);
    }

    #[test]
    fn expand_2d_replicates_slices() {
        let v = Volume::from_fn([3, 2, 1, 2], Modality::XRay, true, |i, j, _, c| (i * 10 + j + c * 100) as f64).unwrap();
        let e = expand_2d(&v).unwrap();
        assert_eq!(e.dims(), [3, 2, 4, 2]);
        assert!(e.is_native_2d);
        for i in 0..3 {
            for j in 0..2 {
                for c in 0..2 {
                    for k in 0..4 {
                        assert_eq!(e.get(i, j, k, c), v.get(i, j, 0, c));
                    }
                }
            }
        }
        assert!(expand_2d(&e).is_err());
    }

    #[test]
    fn resize_identity_and_constant() {
        let v = Volume::from_fn([5, 4, 3, 1], Modality::Ct, false, |i, j, k, _| ((i * 7 + j * 3 + k) as f64).sin()).unwrap();
        let r = resize(&v, 5, 4, 3).unwrap();
        assert!(r.max_abs_diff(&v) < 1e-12);

        let c = Volume::filled([6, 5, 7, 1], 0.37, Modality::Ct, false).unwrap();
        let r = resize(&c, 3, 9, 4).unwrap();
        assert!(r.voxels().iter().all(|&x| (x - 0.37).abs() < 1e-15));
    }

    #[test]
    fn resize_linear_ramp_matches_interpolant() {
        // f(i, j, k) = 2i + 3j + 5k is reproduced exactly by trilinear
        // interpolation; corner-aligned sampling of n -> m maps output o to
        // source coordinate o (n - 1) / (m - 1).
        let f = |i: f64, j: f64, k: f64| 2.0 * i + 3.0 * j + 5.0 * k;
        let v = Volume::from_fn([4, 4, 4, 1], Modality::Ct, false, |i, j, k, _| f(i as f64, j as f64, k as f64)).unwrap();
        let r = resize(&v, 2, 2, 2).unwrap();
        for (oi, oj, ok) in [(0, 0, 0), (1, 0, 1), (1, 1, 1), (0, 1, 0)] {
            let expect = f(3.0 * oi as f64, 3.0 * oj as f64, 3.0 * ok as f64);
            assert!((r.get(oi, oj, ok, 0) - expect).abs() < 1e-12);
        }
        let r = resize(&v, 3, 3, 3).unwrap();
        for oi in 0..3 {
            for oj in 0..3 {
                for ok in 0..3 {
                    let expect = f(1.5 * oi as f64, 1.5 * oj as f64, 1.5 * ok as f64);
                    assert!((r.get(oi, oj, ok, 0) - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn preprocess_2d_to_full_size() {
        let v = Volume::from_fn([600, 400, 1, 1], Modality::XRay, true, |i, j, _, _| ((i * j) % 256) as f64).unwrap();
        let p = preprocess(&v).unwrap();
        assert_eq!(p.dims(), [512, 512, 4, 1]);
        assert!(p.voxels().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn preprocess_3d_depth_rules() {
        let v = Volume::from_fn([30, 30, 37, 1], Modality::Ct, false, |i, j, k, _| (i + j + k) as f64).unwrap();
        let cfg = PreprocessConfig { size_2d: 64, size_3d: 32 };
        assert_eq!(preprocess_with(&v, &cfg).unwrap().dims(), [32, 32, 36, 1]);
        let v = Volume::from_fn([12, 12, 80, 1], Modality::Mri, false, |i, _, k, _| (i * k) as f64).unwrap();
        assert_eq!(preprocess_with(&v, &cfg).unwrap().dims(), [32, 32, 64, 1]);
    }

    fn arb_volume() -> impl Strategy<Value = Volume> {
        (1usize..9, 1usize..9, 1usize..12, any::<bool>(), any::<u64>()).prop_map(|(h, w, d, native, seed)| {
            let d = if native { 1 } else { d };
            Volume::from_fn([h, w, d, 1], Modality::Ct, native, |i, j, k, _| {
                let x = (i as u64 * 31 + j as u64 * 17 + k as u64 * 7 + seed % 97) % 251;
                x as f64
            })
            .unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn preprocess_is_idempotent(v in arb_volume()) {
            let cfg = PreprocessConfig { size_2d: 32, size_3d: 32 };
            let once = preprocess_with(&v, &cfg).unwrap();
            let twice = preprocess_with(&once, &cfg).unwrap();
            prop_assert!(once.max_abs_diff(&twice) <= 1e-9);
            prop_assert_eq!(once.depth() % 4, 0);
            prop_assert_eq!((once.height() * once.width()) % (32 * 32), 0);
        }

        #[test]
        fn preprocess_ignores_positive_affine_maps(v in arb_volume(), a in 0.01f64..50.0, b in -100f64..100.0) {
            let cfg = PreprocessConfig { size_2d: 32, size_3d: 32 };
            let mut shifted = v.clone();
            shifted.voxels_mut().iter_mut().for_each(|x| *x = a * *x + b);
            let p = preprocess_with(&v, &cfg).unwrap();
            let q = preprocess_with(&shifted, &cfg).unwrap();
            prop_assert!(p.max_abs_diff(&q) <= 1e-9);
        }
    }
}

//! Encode a 2D and a 3D scan with the vision transformer and compress both
//! to the same number of visual tokens with the perceiver.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ivlm::numerics::ModelParams;
use ivlm::perceiver::{self, PerceiverConfig};
use ivlm::vision::{self, grid_dims, VisionConfig};
use ivlm::volume::{preprocess, Modality, Volume};

fn main() -> ivlm::Result<()> {
    // Full-size patches, narrow width so the example runs instantly.
    let vcfg = VisionConfig { dim: 16, layers: 1, heads: 2, ..VisionConfig::default() };
    let pcfg = PerceiverConfig { n_queries: 32, layers: 1, dim: 24, heads: 2, ..PerceiverConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = ModelParams::new();
    vision::init_params(&mut params, &vcfg, &mut rng);
    perceiver::init_params(&mut params, &pcfg, vcfg.dim, &mut rng);
    println!("{} parameters", params.num_scalars());

    let scans = [
        ("chest x-ray 300x280", Volume::from_fn([300, 280, 1, 1], Modality::XRay, true, |i, j, _, _| ((i + j) % 17) as f64)?),
        ("ct 200x200x61", Volume::from_fn([200, 200, 61, 1], Modality::Ct, false, |i, _, k, _| (i * k % 29) as f64)?),
    ];
    for (name, raw) in &scans {
        let v = preprocess(raw)?;
        let (h, w, d) = grid_dims(v.dims(), &vcfg)?;
        let tokens = vision::encode(&v, &params, &vcfg)?;
        let pooled = perceiver::resample(&tokens, &params, &pcfg)?;
        println!(
            "{name}: preprocessed {:?}, patch grid {h}x{w}x{d}, tokens {:?}, resampled {:?}",
            v.dims(),
            tokens.shape(),
            pooled.shape()
        );
    }
    Ok(())
}

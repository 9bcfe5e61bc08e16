//! Write a scan to disk, read it back and run it through preprocessing.
//!
//! ```text
//! cargo run --example preprocess_volume
//! ```

use ivlm::volume::{preprocess, read_header, read_volume, round_depth, write_volume, Modality, Volume};

fn main() -> ivlm::Result<()> {
    let dir = std::env::temp_dir().join("ivlm-preprocess-example");
    std::fs::create_dir_all(&dir)?;

    // A small CT stack with a bright sphere in the middle.
    let ct = Volume::from_fn([40, 48, 23, 1], Modality::Ct, false, |i, j, k, _| {
        let r2 = (i as f64 - 20.0).powi(2) + (j as f64 - 24.0).powi(2) + (k as f64 - 11.0).powi(2) * 4.0;
        if r2 < 100.0 { 900.0 } else { -200.0 }
    })?;
    let xray = Volume::from_fn([60, 50, 1, 1], Modality::XRay, true, |i, j, _, _| (i * j) as f64)?;

    for (name, v) in [("ct", &ct), ("xray", &xray)] {
        let path = dir.join(format!("{name}.vol"));
        write_volume(&path, v)?;
        let header = read_header(&path)?;
        let back = read_volume(&path)?;
        let out = preprocess(&back)?;
        let (lo, hi) = out.min_max();
        println!(
            "{name}: stored {:?} ({}), preprocessed {:?}, range [{lo:.3}, {hi:.3}]",
            header.dims,
            header.modality.name(),
            out.dims(),
        );
    }

    // 3D depth snaps to the nearest multiple of 4 inside [4, 64].
    for d in [1, 2, 6, 23, 61, 64, 90] {
        println!("depth {d:>3} -> {}", round_depth(d)?);
    }
    Ok(())
}

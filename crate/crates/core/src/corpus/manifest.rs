use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::{read_volume, Volume};

use super::Sample;

/// Reads a JSON-lines manifest, validating every sample.
pub fn read_manifest(path: &Path) -> Result<Vec<Sample>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(&line)
            .map_err(|e| Error::data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        sample.validate()?;
        out.push(sample);
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Resolves a volume path of a manifest entry; relative paths are taken
/// from the manifest's directory.
pub fn resolve_volume_path(manifest: &Path, volume: &str) -> std::path::PathBuf {
    let p = Path::new(volume);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// Reads a manifest and every volume it references.
pub fn read_manifest_with_volumes(path: &Path) -> Result<Vec<(Sample, Vec<Volume>)>> {
    read_manifest(path)?
        .into_iter()
        .map(|s| {
            let vols = s
                .volume_paths
                .iter()
                .map(|v| {
                    let full = resolve_volume_path(path, v);
                    read_volume(&full).map_err(|e| Error::data(format!("{}: {e}", full.display())))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((s, vols))
        })
        .collect()
}

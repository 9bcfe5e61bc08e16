use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{Modality, Volume};

const MAGIC: &str = "IVLM-VOL";
const VERSION: &str = "v1";

/// Parsed first line of a volume file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VolumeHeader {
    pub dims: [usize; 4],
    pub modality: Modality,
    pub is_native_2d: bool,
}

impl VolumeHeader {
    fn parse(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split_ascii_whitespace().collect();
        let [magic, version, h, w, d, c, modality, native] = fields.as_slice() else {
            return Err(Error::format(format!("volume header needs 8 fields, got {line:?}")));
        };
        if *magic != MAGIC || *version != VERSION {
            return Err(Error::format(format!("not an {MAGIC} {VERSION} file")));
        }
        let dim = |s: &str| -> Result<usize> {
            s.parse::<usize>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| Error::format(format!("bad volume dimension {s:?}")))
        };
        let is_native_2d = match *native {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(Error::format(format!("bad NATIVE2D flag {other:?}"))),
        };
        Ok(VolumeHeader {
            dims: [dim(h)?, dim(w)?, dim(d)?, dim(c)?],
            modality: modality.parse()?,
            is_native_2d,
        })
    }
}

/// Writes `IVLM-VOL v1 H W D C MODALITY NATIVE2D\n` followed by the voxels as
/// little-endian `f64`.
pub fn write_volume(path: &Path, v: &Volume) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let [h, wd, d, c] = v.dims();
    writeln!(w, "{MAGIC} {VERSION} {h} {wd} {d} {c} {} {}", v.modality, u8::from(v.is_native_2d))?;
    for x in v.voxels() {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads only the header line.
pub fn read_header(path: &Path) -> Result<VolumeHeader> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    VolumeHeader::parse(&line)
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header = VolumeHeader::parse(&line)?;
    let n: usize = header.dims.iter().product();
    let mut raw = vec![0u8; n * 8];
    r.read_exact(&mut raw)
        .map_err(|_| Error::format(format!("volume {} is truncated", path.display())))?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::format(format!("volume {} has trailing bytes", path.display())));
    }
    let voxels = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Volume::new(header.dims, voxels, header.modality, header.is_native_2d)
}

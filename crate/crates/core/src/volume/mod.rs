//! Scan volumes: data model, on-disk format and the preprocessing pipeline.

mod io;
mod preprocess;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{read_header, read_volume, write_volume, VolumeHeader};
pub use preprocess::{
    expand_2d, min_max_normalize, preprocess, preprocess_with, resize, round_depth, PreprocessConfig,
};

/// Imaging technology of a scan. `Other` marks non-radiologic images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "CT")]
    Ct,
    #[serde(rename = "MRI")]
    Mri,
    Ultrasound,
    #[serde(rename = "PET")]
    Pet,
    #[serde(rename = "X-ray")]
    XRay,
    Angiography,
    Other,
}

impl Modality {
    /// The six radiologic modalities, in benchmark candidate order.
    pub const RADIOLOGIC: [Modality; 6] =
        [Modality::Ct, Modality::Mri, Modality::Ultrasound, Modality::Pet, Modality::XRay, Modality::Angiography];

    pub const ALL: [Modality; 7] = [
        Modality::Ct,
        Modality::Mri,
        Modality::Ultrasound,
        Modality::Pet,
        Modality::XRay,
        Modality::Angiography,
        Modality::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Ct => "CT",
            Modality::Mri => "MRI",
            Modality::Ultrasound => "Ultrasound",
            Modality::Pet => "PET",
            Modality::XRay => "X-ray",
            Modality::Angiography => "Angiography",
            Modality::Other => "Other",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Modality::ALL
            .into_iter()
            .find(|m| m.name().to_ascii_lowercase() == lower)
            .or(match lower.as_str() {
                "xray" => Some(Modality::XRay),
                _ => None,
            })
            .ok_or_else(|| Error::format(format!("unknown modality {s:?}")))
    }
}

/// Dense `H×W×D×C` intensity array, row-major with channels fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    height: usize,
    width: usize,
    depth: usize,
    channels: usize,
    voxels: Vec<f64>,
    pub modality: Modality,
    pub is_native_2d: bool,
}

impl Volume {
    pub fn new(
        dims: [usize; 4],
        voxels: Vec<f64>,
        modality: Modality,
        is_native_2d: bool,
    ) -> Result<Self> {
        let [height, width, depth, channels] = dims;
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("volume dimensions must be >= 1, got {dims:?}")));
        }
        let n = height * width * depth * channels;
        if voxels.len() != n {
            return Err(Error::shape(format!(
                "volume {height}x{width}x{depth}x{channels} needs {n} voxels, got {}",
                voxels.len()
            )));
        }
        Ok(Volume { height, width, depth, channels, voxels, modality, is_native_2d })
    }

    /// Volume whose voxels are produced by `f(i, j, k, c)`.
    pub fn from_fn(
        dims: [usize; 4],
        modality: Modality,
        is_native_2d: bool,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let [h, w, d, c] = dims;
        let mut voxels = Vec::with_capacity(h * w * d * c);
        for i in 0..h {
            for j in 0..w {
                for k in 0..d {
                    for ch in 0..c {
                        voxels.push(f(i, j, k, ch));
                    }
                }
            }
        }
        Self::new(dims, voxels, modality, is_native_2d)
    }

    pub fn filled(dims: [usize; 4], value: f64, modality: Modality, is_native_2d: bool) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, vec![value; n], modality, is_native_2d)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.height, self.width, self.depth, self.channels]
    }

    pub fn voxels(&self) -> &[f64] {
        &self.voxels
    }

    pub fn voxels_mut(&mut self) -> &mut [f64] {
        &mut self.voxels
    }

    pub fn index(&self, i: usize, j: usize, k: usize, c: usize) -> usize {
        ((i * self.width + j) * self.depth + k) * self.channels + c
    }

    pub fn get(&self, i: usize, j: usize, k: usize, c: usize) -> f64 {
        self.voxels[self.index(i, j, k, c)]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.voxels
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn max_abs_diff(&self, other: &Volume) -> f64 {
        assert_eq!(self.dims(), other.dims(), "volume dims differ");
        self.voxels
            .iter()
            .zip(&other.voxels)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modality_names_round_trip() {
        for m in Modality::ALL {
            assert_eq!(m.name().parse::<Modality>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
        }
        assert_eq!("x-RAY".parse::<Modality>().unwrap(), Modality::XRay);
        assert!("sonar".parse::<Modality>().is_err());
    }

    #[test]
    fn volume_rejects_inconsistent_sizes() {
        assert!(Volume::new([2, 2, 1, 1], vec![0.0; 3], Modality::Ct, true).is_err());
        assert!(Volume::new([0, 2, 1, 1], vec![], Modality::Ct, true).is_err());
    }

    #[test]
    fn indexing_is_row_major_channels_last() {
        let v = Volume::from_fn([2, 3, 4, 2], Modality::Mri, false, |i, j, k, c| {
            (i * 1000 + j * 100 + k * 10 + c) as f64
        })
        .unwrap();
        assert_eq!(v.get(1, 2, 3, 1), 1231.0);
        assert_eq!(v.voxels()[1], 1.0);
        assert_eq!(v.voxels()[2], 10.0);
    }
}

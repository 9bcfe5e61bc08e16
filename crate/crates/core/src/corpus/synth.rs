//! Synthetic corpus whose volumes encode their labels in voxel statistics.
//!
//! Every volume lives in `[0, 255]` with fiducial voxels `0` at the first
//! corner and `255` at the last, so min-max normalization is a fixed
//! rescale. The background level identifies the modality and disease `k`
//! paints a bright block inside cell `k` of a 4×4 grid over height and
//! width, through all slices. [`decode_labels`] inverts the encoding.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{write_volume, Modality, Volume};

use super::templates::judgment_with;
use super::{default_templates, region_name, render_prompt, write_manifest, Form, Labels, PromptTemplate, Sample, Task};

pub const GRID: usize = 4;
pub const MAX_DISEASES: usize = GRID * GRID;
pub const LESION_LEVEL: f64 = 225.0;
pub const NOISE: f64 = 4.0;
/// Smallest in-plane size: four pixels per grid cell.
pub const MIN_SIDE: usize = 4 * GRID;

pub const PRETRAIN_MANIFEST: &str = "pretrain.jsonl";
pub const FINETUNE_MANIFEST: &str = "finetune.jsonl";
pub const TEST_MANIFEST: &str = "test.jsonl";
pub const VOLUME_DIR: &str = "volumes";

/// Background intensity of each modality.
pub fn background_level(m: Modality) -> f64 {
    match m {
        Modality::Ct => 40.0,
        Modality::Mri => 60.0,
        Modality::Ultrasound => 80.0,
        Modality::Pet => 100.0,
        Modality::XRay => 120.0,
        Modality::Angiography => 140.0,
        Modality::Other => 160.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub count: usize,
    pub tasks: Vec<Task>,
    pub diseases: Vec<String>,
    pub modalities: Vec<Modality>,
    /// Probability that each disease is present.
    pub disease_rate: f64,
    /// Share of modality/diagnosis training samples in judgment form. The
    /// test split always uses open modality and judgment diagnosis prompts.
    pub judgment_fraction: f64,
    pub three_d_fraction: f64,
    /// Share of report samples that pair a 2D and a 3D scan.
    pub multi_image_fraction: f64,
    pub test_fraction: f64,
    /// Share of the non-test samples routed to the finetune split.
    pub finetune_fraction: f64,
    /// Share of samples whose volumes are non-radiologic.
    pub other_fraction: f64,
    pub size_2d: [usize; 2],
    pub size_3d: [usize; 2],
    pub depth_3d: [usize; 2],
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            count: 200,
            tasks: Task::BENCHMARK.to_vec(),
            diseases: ["edema", "pneumothorax", "pneumonia", "nodule", "fracture"].map(String::from).to_vec(),
            modalities: Modality::RADIOLOGIC.to_vec(),
            disease_rate: 0.3,
            judgment_fraction: 0.5,
            three_d_fraction: 0.5,
            multi_image_fraction: 0.5,
            test_fraction: 0.2,
            finetune_fraction: 0.5,
            other_fraction: 0.0,
            size_2d: [48, 96],
            size_3d: [24, 48],
            depth_3d: [3, 40],
        }
    }
}

impl SynthSpec {
    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| Error::data(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() || self.count < self.tasks.len() {
            return Err(Error::data(format!("count {} is smaller than the {} task(s)", self.count, self.tasks.len())));
        }
        if self.diseases.is_empty() || self.diseases.len() > MAX_DISEASES {
            return Err(Error::data(format!("need 1..={MAX_DISEASES} diseases, got {}", self.diseases.len())));
        }
        let mut sorted = self.diseases.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.diseases.len() {
            return Err(Error::data("disease names must be distinct"));
        }
        if self.modalities.is_empty() || self.modalities.contains(&Modality::Other) {
            return Err(Error::data("modalities must be a non-empty list of radiologic modalities"));
        }
        for (name, f) in [
            ("disease_rate", self.disease_rate),
            ("judgment_fraction", self.judgment_fraction),
            ("three_d_fraction", self.three_d_fraction),
            ("multi_image_fraction", self.multi_image_fraction),
            ("test_fraction", self.test_fraction),
            ("finetune_fraction", self.finetune_fraction),
            ("other_fraction", self.other_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::data(format!("{name} must lie in [0, 1], got {f}")));
            }
        }
        for (name, [lo, hi]) in [("size_2d", self.size_2d), ("size_3d", self.size_3d), ("depth_3d", self.depth_3d)] {
            if lo == 0 || lo > hi {
                return Err(Error::data(format!("{name} range {lo}..{hi} is invalid")));
            }
        }
        if self.size_2d[0] < MIN_SIDE || self.size_3d[0] < MIN_SIDE {
            return Err(Error::data(format!("volumes need at least {MIN_SIDE} pixels per side")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Pretrain,
    Finetune,
    Test,
}

/// Everything decided about one sample before it is rendered.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePlan {
    pub index: usize,
    pub id: String,
    pub task: Task,
    pub split: Split,
    pub form: Form,
    /// Forced yes/no answer for judgment prompts.
    pub target: Option<bool>,
    pub is_3d: bool,
    pub two_images: bool,
    pub non_radiologic: bool,
}

/// Assigns tasks round-robin, splits by a seeded permutation, and forms and
/// answers per split. Test judgments alternate yes/no per task so the test
/// split is balanced.
pub fn plan(spec: &SynthSpec, seed: u64) -> Result<Vec<SamplePlan>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.count;
    let n_test = ((n as f64) * spec.test_fraction).round() as usize;
    let n_finetune = (((n - n_test) as f64) * spec.finetune_fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let mut split = vec![Split::Pretrain; n];
    for (rank, &i) in order.iter().enumerate() {
        split[i] = if rank < n_test {
            Split::Test
        } else if rank < n_test + n_finetune {
            Split::Finetune
        } else {
            Split::Pretrain
        };
    }

    let mut test_flip: BTreeMap<Task, bool> = BTreeMap::new();
    let mut plans = Vec::with_capacity(n);
    for (i, &split) in split.iter().enumerate() {
        let task = spec.tasks[i % spec.tasks.len()];
        let form = match (task, split) {
            (Task::ModalityRecognition, Split::Test) => Form::Open,
            (Task::DiseaseDiagnosis, Split::Test) => Form::Judgment,
            (Task::ModalityRecognition | Task::DiseaseDiagnosis, _) if rng.random_bool(spec.judgment_fraction) => {
                Form::Judgment
            }
            _ => Form::Open,
        };
        let target = (form == Form::Judgment).then(|| {
            if split == Split::Test {
                let flip = test_flip.entry(task).or_insert(false);
                *flip = !*flip;
                *flip
            } else {
                rng.random_bool(0.5)
            }
        });
        let two_images = task == Task::ReportGeneration && rng.random_bool(spec.multi_image_fraction);
        let is_3d = rng.random_bool(spec.three_d_fraction);
        let non_radiologic = rng.random_bool(spec.other_fraction);
        plans.push(SamplePlan {
            index: i,
            id: format!("s{i:05}"),
            task,
            split,
            form,
            target,
            is_3d,
            two_images,
            non_radiologic,
        });
    }
    Ok(plans)
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Draws labels, honouring a forced judgment answer.
fn draw_labels(spec: &SynthSpec, p: &SamplePlan, rng: &mut ChaCha8Rng) -> Labels {
    let modality = if p.non_radiologic { Modality::Other } else { *spec.modalities.choose(rng).expect("validated") };
    let mut present: Vec<bool> = spec.diseases.iter().map(|_| rng.random_bool(spec.disease_rate)).collect();
    if p.task == Task::DiseaseDiagnosis && p.form == Form::Judgment {
        let k = rng.random_range(0..present.len());
        match p.target {
            Some(true) if !present.iter().any(|&x| x) => present[k] = true,
            Some(false) if present.iter().all(|&x| x) => present[k] = false,
            _ => {}
        }
    }
    let mut labels = Labels { modality: Some(modality), ..Default::default() };
    for (k, (d, &on)) in spec.diseases.iter().zip(&present).enumerate() {
        labels.diseases.insert(d.clone(), on);
        if on {
            labels.regions.insert(d.clone(), region_name(k));
        }
    }
    labels
}

fn cell_bounds(n: usize, cell: usize) -> (usize, usize) {
    (cell * n / GRID, (cell + 1) * n / GRID)
}

/// Rows (or columns) of cell `cell` painted by a lesion. Cells under eight
/// pixels are painted edge to edge.
fn lesion_span(n: usize, cell: usize) -> (usize, usize) {
    let (lo, hi) = cell_bounds(n, cell);
    let margin = (hi - lo) / 8;
    (lo + margin, hi - margin)
}

/// Central half of a cell, read by the decoder. It lies inside the lesion
/// span at every legal size and survives resizing.
fn probe_span(n: usize, cell: usize) -> (usize, usize) {
    let (lo, hi) = cell_bounds(n, cell);
    let q = (hi - lo) / 4;
    (lo + q, (hi - q).max(lo + q + 1))
}

/// Renders a volume for `labels`. Disease order follows `diseases`.
pub fn render_volume(
    labels: &Labels,
    diseases: &[String],
    dims: [usize; 3],
    is_native_2d: bool,
    rng: &mut impl Rng,
) -> Result<Volume> {
    let [h, w, d] = dims;
    let modality = labels.modality.ok_or_else(|| Error::data("volume needs a modality label"))?;
    let base = background_level(modality);
    let blocks: Vec<((usize, usize), (usize, usize))> = diseases
        .iter()
        .enumerate()
        .filter(|(_, name)| labels.diseases.get(*name).copied().unwrap_or(false))
        .map(|(k, _)| (lesion_span(h, k / GRID), lesion_span(w, k % GRID)))
        .collect();
    let mut v = Volume::from_fn([h, w, d, 1], modality, is_native_2d, |i, j, _, _| {
        let lesion = blocks.iter().any(|&((r0, r1), (c0, c1))| (r0..r1).contains(&i) && (c0..c1).contains(&j));
        let level = if lesion { LESION_LEVEL } else { base };
        level + rng.random_range(-NOISE..NOISE)
    })?;
    let last = v.index(h - 1, w - 1, d - 1, 0);
    v.voxels_mut()[0] = 0.0;
    v.voxels_mut()[last] = 255.0;
    Ok(v)
}

/// Reads modality and disease presence back from a volume produced by
/// [`render_volume`], at any intensity scale.
pub fn decode_labels(v: &Volume, diseases: &[String]) -> (Modality, BTreeMap<String, bool>) {
    let (lo, hi) = v.min_max();
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    let at = |i: usize, j: usize, k: usize| (v.get(i, j, k, 0) - lo) * scale;
    let mut values: Vec<f64> = v.voxels().iter().map(|x| (x - lo) * scale).collect();
    values.sort_by(f64::total_cmp);
    let median = values[values.len() / 2];
    let modality = Modality::ALL
        .into_iter()
        .min_by(|a, b| (background_level(*a) - median).abs().total_cmp(&(background_level(*b) - median).abs()))
        .expect("non-empty");
    let threshold = (background_level(modality) + LESION_LEVEL) / 2.0;
    let mut found = BTreeMap::new();
    for (k, name) in diseases.iter().enumerate() {
        let (r0, r1) = probe_span(v.height(), k / GRID);
        let (c0, c1) = probe_span(v.width(), k % GRID);
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in r0..r1 {
            for j in c0..c1 {
                for z in 0..v.depth() {
                    sum += at(i, j, z);
                    count += 1;
                }
            }
        }
        found.insert(name.clone(), count > 0 && sum / count as f64 > threshold);
    }
    (modality, found)
}

fn volume_dims(spec: &SynthSpec, three_d: bool, rng: &mut impl Rng) -> [usize; 3] {
    if three_d {
        let s = rng.random_range(spec.size_3d[0]..=spec.size_3d[1]);
        [s, s, rng.random_range(spec.depth_3d[0]..=spec.depth_3d[1])]
    } else {
        let s = rng.random_range(spec.size_2d[0]..=spec.size_2d[1]);
        [s, s, 1]
    }
}

/// A rendered sample with its volumes, in `volume_paths` order.
#[derive(Debug, Clone)]
pub struct SynthItem {
    pub split: Split,
    pub sample: Sample,
    pub volumes: Vec<Volume>,
}

fn pick_template<'a>(templates: &'a [PromptTemplate], p: &SamplePlan, rng: &mut impl Rng) -> &'a PromptTemplate {
    let images = if p.two_images { 2 } else { 1 };
    let fits: Vec<&PromptTemplate> =
        templates.iter().filter(|t| t.task == p.task && t.form == p.form && t.images() == images).collect();
    fits.choose(rng).expect("default templates cover every task and form")
}

fn free_text(labels: &Labels) -> String {
    let m = labels.modality.map(|m| m.name().to_lowercase()).unwrap_or_default();
    let findings: Vec<String> = labels
        .positives()
        .map(|d| format!("{d} in the {} region", labels.regions.get(d).map(String::as_str).unwrap_or("central")))
        .collect();
    if findings.is_empty() {
        format!("the {m} image <image-1> appears normal.")
    } else {
        format!("the {m} image <image-1> demonstrates {}.", findings.join(" and "))
    }
}

/// Renders one planned sample.
pub fn realize(spec: &SynthSpec, p: &SamplePlan, seed: u64) -> Result<SynthItem> {
    let mut rng = sample_rng(seed, p.index);
    let labels = draw_labels(spec, p, &mut rng);
    let n_images = if p.two_images { 2 } else { 1 };
    let volume_paths: Vec<String> = (0..n_images).map(|k| format!("{VOLUME_DIR}/{}_{k}.vol", p.id)).collect();

    let sample = if p.task == Task::FreeInterleaved {
        Sample::interleaved(&p.id, p.task, free_text(&labels), volume_paths, labels.clone())
    } else {
        let templates = default_templates();
        let template = pick_template(&templates, p, &mut rng);
        let (instruction, response) = match p.target {
            Some(want) => {
                let (candidate, truth) = judgment_candidate(spec, &labels, p.task, want, &mut rng)?;
                judgment_with(template, &candidate, truth)?
            }
            None => render_prompt(template, &labels, &mut rng)?,
        };
        Sample::instruction(&p.id, p.task, instruction, response, volume_paths, labels.clone())
    };

    let mut volumes = Vec::with_capacity(n_images);
    for k in 0..n_images {
        let three_d = if p.two_images { k == 1 } else { p.is_3d };
        let dims = volume_dims(spec, three_d, &mut rng);
        volumes.push(render_volume(&labels, &spec.diseases, dims, !three_d, &mut rng)?);
    }
    Ok(SynthItem { split: p.split, sample, volumes })
}

fn judgment_candidate(
    spec: &SynthSpec,
    labels: &Labels,
    task: Task,
    want: bool,
    rng: &mut impl Rng,
) -> Result<(String, bool)> {
    let candidates: Vec<(String, bool)> = match task {
        Task::ModalityRecognition => {
            let truth = labels.modality.ok_or_else(|| Error::data("missing modality"))?;
            Modality::RADIOLOGIC.iter().filter(|m| spec.modalities.contains(m) || **m == truth).map(|&m| (m.name().to_string(), m == truth)).collect()
        }
        _ => labels.diseases.iter().map(|(d, &on)| (d.clone(), on)).collect(),
    };
    let pool: Vec<&(String, bool)> = candidates.iter().filter(|(_, t)| *t == want).collect();
    match pool.choose(rng) {
        Some(c) => Ok((*c).clone()),
        // A single-modality spec has no negative candidate of its own.
        None => {
            let fallback: Vec<&Modality> = Modality::RADIOLOGIC.iter().filter(|m| Some(**m) != labels.modality).collect();
            let m = fallback.choose(rng).expect("five other modalities");
            Ok((m.name().to_string(), false))
        }
    }
}

/// Summary of a written corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SynthSummary {
    pub pretrain: usize,
    pub finetune: usize,
    pub test: usize,
    pub volumes: usize,
}

/// Generates the corpus into `out`: three manifests and a volume directory.
/// Rendering runs on the current rayon pool; output does not depend on it.
pub fn synth_corpus(spec: &SynthSpec, seed: u64, out: &Path) -> Result<SynthSummary> {
    let plans = plan(spec, seed)?;
    fs::create_dir_all(out.join(VOLUME_DIR))?;
    let samples: Vec<(Split, Sample, usize)> = plans
        .par_iter()
        .map(|p| {
            let item = realize(spec, p, seed)?;
            for (path, v) in item.sample.volume_paths.iter().zip(&item.volumes) {
                write_volume(&out.join(path), v)?;
            }
            Ok((item.split, item.sample, item.volumes.len()))
        })
        .collect::<Result<_>>()?;

    let mut summary = SynthSummary::default();
    let mut by_split: BTreeMap<&str, Vec<Sample>> = BTreeMap::new();
    for (split, sample, n_vol) in samples {
        summary.volumes += n_vol;
        let name = match split {
            Split::Pretrain => {
                summary.pretrain += 1;
                PRETRAIN_MANIFEST
            }
            Split::Finetune => {
                summary.finetune += 1;
                FINETUNE_MANIFEST
            }
            Split::Test => {
                summary.test += 1;
                TEST_MANIFEST
            }
        };
        by_split.entry(name).or_default().push(sample);
    }
    for name in [PRETRAIN_MANIFEST, FINETUNE_MANIFEST, TEST_MANIFEST] {
        write_manifest(&out.join(name), by_split.get(name).map(Vec::as_slice).unwrap_or(&[]))?;
    }
    Ok(summary)
}

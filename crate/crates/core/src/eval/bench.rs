use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{resolve_volume_path, Sample, SampleKind, Task};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::training::Lexicon;
use crate::volume::{read_volume, Modality};

use super::metrics::{accuracy_f1, bleu1, resolve_closed_index, rouge1, umls_precision_recall, F1Mode};

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Produces an answer for an instruction sample.
pub trait Predictor: Sync {
    fn predict(&self, sample: &Sample) -> Result<String>;
}

/// Answers with the model's greedy continuation of the instruction.
pub struct ModelPredictor<'a> {
    pub model: &'a Model,
    /// Manifest the samples came from; volume paths resolve against it.
    pub manifest: PathBuf,
    pub max_new: usize,
}

impl Predictor for ModelPredictor<'_> {
    fn predict(&self, sample: &Sample) -> Result<String> {
        let volumes = sample
            .volume_paths
            .iter()
            .map(|p| self.model.prepare(&read_volume(&resolve_volume_path(&self.manifest, p))?))
            .collect::<Result<Vec<_>>>()?;
        let instruction = sample.instruction.as_deref().unwrap_or(&sample.text);
        self.model.generate(instruction, &volumes, self.max_new)
    }
}

/// Candidate answers of a closed task.
pub fn closed_list(task: Task) -> Option<Vec<String>> {
    match task {
        Task::ModalityRecognition => {
            Some(Modality::RADIOLOGIC.iter().map(|m| m.name().to_string()).collect())
        }
        Task::DiseaseDiagnosis => Some(vec!["yes".into(), "no".into()]),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub task: Task,
    pub prediction: String,
    pub reference: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub closed_list: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resolved_label: Option<String>,
    /// Per-record metric values.
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: Task,
    pub n: usize,
    pub metrics: BTreeMap<String, MetricValue>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub tasks: Vec<MetricReport>,
    pub warnings: Vec<String>,
}

impl BenchReport {
    pub fn task(&self, task: Task) -> Option<&MetricReport> {
        self.tasks.iter().find(|r| r.task == task)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Fixed-width table, one row per task and metric.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<22} {:>5} {:<14} {:>8} {:>18}\n", "task", "n", "metric", "value", "95% CI");
        for r in &self.tasks {
            for (name, m) in &r.metrics {
                let ci = format!("({:.4}, {:.4})", m.ci_low, m.ci_high);
                writeln!(out, "{:<22} {:>5} {:<14} {:>8.4} {:>18}", r.task.name(), r.n, name, m.value, ci)
                    .expect("write to string");
            }
        }
        for w in &self.warnings {
            writeln!(out, "warning: {w}").expect("write to string");
        }
        out
    }
}

/// Percentile bootstrap over record indices; the interval is widened to
/// contain `value` when resampling skews it away.
pub fn bootstrap_ci(
    n: usize,
    value: f64,
    stat: impl Fn(&[usize]) -> f64,
    resamples: usize,
    rng: &mut impl Rng,
) -> (f64, f64) {
    if n == 0 || resamples == 0 {
        return (value, value);
    }
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            stat(&idx)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let pick = |q: f64| stats[((q * resamples as f64).floor() as usize).min(resamples - 1)];
    (pick(0.025).min(value), pick(0.975).max(value))
}

fn closed_records(records: &[EvalRecord], idx: &[usize]) -> Vec<(String, String)> {
    idx.iter()
        .map(|&i| (records[i].resolved_label.clone().unwrap_or_default(), records[i].reference.clone()))
        .collect()
}

fn f1_mode(task: Task) -> F1Mode {
    match task {
        Task::DiseaseDiagnosis => F1Mode::Binary("yes".into()),
        _ => F1Mode::Macro(closed_list(task).unwrap_or_default()),
    }
}

fn score_record(sample: &Sample, prediction: String, lexicon: &Lexicon) -> Result<EvalRecord> {
    let reference = sample.response.clone().unwrap_or_default();
    let closed = closed_list(sample.task);
    let mut metrics = BTreeMap::new();
    let mut resolved_label = None;
    if let Some(list) = &closed {
        let label = list[resolve_closed_index(&prediction, list)?].clone();
        metrics.insert("correct".into(), f64::from(u8::from(label.to_lowercase() == reference.to_lowercase())));
        resolved_label = Some(label);
    } else {
        let (p, r) = umls_precision_recall(&prediction, &reference, lexicon);
        metrics.insert("bleu1".into(), bleu1(&prediction, &reference));
        metrics.insert("rouge1".into(), rouge1(&prediction, &reference)?);
        metrics.insert("umls_precision".into(), p);
        metrics.insert("umls_recall".into(), r);
    }
    Ok(EvalRecord {
        id: sample.id.clone(),
        task: sample.task,
        prediction,
        reference,
        closed_list: closed,
        resolved_label,
        metrics,
    })
}

fn summarize(task: Task, records: &[EvalRecord], rng: &mut ChaCha8Rng) -> Result<MetricReport> {
    let n = records.len();
    let mut metrics = BTreeMap::new();
    if task.is_closed() {
        let mode = f1_mode(task);
        let all: Vec<usize> = (0..n).collect();
        let (acc, f1) = accuracy_f1(&closed_records(records, &all), &mode)?;
        let stat = |which: usize| {
            let mode = mode.clone();
            move |idx: &[usize]| {
                let (a, f) = accuracy_f1(&closed_records(records, idx), &mode).expect("non-empty resample");
                if which == 0 {
                    a
                } else {
                    f
                }
            }
        };
        for (name, value, which) in [("acc", acc, 0), ("f1", f1, 1)] {
            let (lo, hi) = bootstrap_ci(n, value, stat(which), BOOTSTRAP_RESAMPLES, rng);
            metrics.insert(name.to_string(), MetricValue { value, ci_low: lo, ci_high: hi });
        }
    } else {
        for name in ["bleu1", "rouge1", "umls_precision", "umls_recall"] {
            let vals: Vec<f64> = records.iter().map(|r| r.metrics[name]).collect();
            let mean = |idx: &[usize]| idx.iter().map(|&i| vals[i]).sum::<f64>() / idx.len() as f64;
            let all: Vec<usize> = (0..n).collect();
            let value = mean(&all);
            let (lo, hi) = bootstrap_ci(n, value, mean, BOOTSTRAP_RESAMPLES, rng);
            metrics.insert(name.to_string(), MetricValue { value, ci_low: lo, ci_high: hi });
        }
    }
    Ok(MetricReport { task, n, metrics })
}

/// Scores `predictor` on every benchmark-task instruction sample, ordered
/// by sample id. Tasks absent from `samples` produce a warning instead of a
/// report. Predictions run on the current rayon pool.
pub fn run_benchmark(
    predictor: &dyn Predictor,
    samples: &[Sample],
    lexicon: &Lexicon,
    seed: u64,
) -> Result<(BenchReport, Vec<EvalRecord>)> {
    let mut usable: Vec<&Sample> = samples
        .iter()
        .filter(|s| s.kind == SampleKind::Instruction && Task::BENCHMARK.contains(&s.task))
        .collect();
    if usable.is_empty() {
        return Err(Error::data("manifest has no benchmark instruction samples"));
    }
    usable.sort_by(|a, b| a.id.cmp(&b.id));
    let records: Vec<EvalRecord> = usable
        .par_iter()
        .map(|s| score_record(s, predictor.predict(s)?, lexicon))
        .collect::<Result<_>>()?;

    let mut report = BenchReport::default();
    for (t, task) in Task::BENCHMARK.into_iter().enumerate() {
        let subset: Vec<EvalRecord> = records.iter().filter(|r| r.task == task).cloned().collect();
        if subset.is_empty() {
            report.warnings.push(format!("task {task} has no samples in the manifest; omitted"));
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64);
        report.tasks.push(summarize(task, &subset, &mut rng)?);
    }
    Ok((report, records))
}

/// Writes records as JSON lines.
pub fn write_records(path: &Path, records: &[EvalRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Labels;

    struct Echo;
    impl Predictor for Echo {
        fn predict(&self, s: &Sample) -> Result<String> {
            Ok(s.response.clone().unwrap())
        }
    }

    struct Yes;
    impl Predictor for Yes {
        fn predict(&self, _: &Sample) -> Result<String> {
            Ok("yes".into())
        }
    }

    fn samples() -> Vec<Sample> {
        let mut out = Vec::new();
        for i in 0..40 {
            let ans = if i % 2 == 0 { "yes" } else { "no" };
            out.push(Sample::instruction(format!("d{i:02}"), Task::DiseaseDiagnosis, "<image-1> Is edema shown in this image?", ans, vec!["v".into()], Labels::default()));
        }
        out.push(Sample::instruction("r0", Task::ReportGeneration, "What can you find from the scan <image-1>?", "ct scan showing edema in the upper left region.", vec!["v".into()], Labels::default()));
        out.push(Sample::instruction("m0", Task::ModalityRecognition, "What's the modality of the input scan <image-1>?", "pet", vec!["v".into()], Labels::default()));
        out
    }

    #[test]
    fn echo_model_scores_perfectly() {
        let (report, records) = run_benchmark(&Echo, &samples(), &Lexicon::default_terms(), 1).unwrap();
        assert_eq!(records.len(), 42);
        for r in &report.tasks {
            for (name, m) in &r.metrics {
                assert_eq!(m.value, 1.0, "{} {name}", r.task);
            }
        }
        assert_eq!(report.warnings.len(), 2);
    }

    #[test]
    fn constant_yes_on_balanced_set() {
        let (report, _) = run_benchmark(&Yes, &samples(), &Lexicon::default_terms(), 1).unwrap();
        let d = report.task(Task::DiseaseDiagnosis).unwrap();
        let acc = d.metrics["acc"];
        assert_eq!(acc.value, 0.5);
        assert!(acc.ci_low <= 0.5 && acc.ci_high >= 0.5 && acc.ci_high - acc.ci_low < 0.4);
    }

    #[test]
    fn reports_are_deterministic() {
        let a = run_benchmark(&Yes, &samples(), &Lexicon::default_terms(), 3).unwrap().0.to_json().unwrap();
        let b = run_benchmark(&Yes, &samples(), &Lexicon::default_terms(), 3).unwrap().0.to_json().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_manifest_is_a_data_error() {
        assert!(matches!(run_benchmark(&Yes, &[], &Lexicon::empty(), 0), Err(Error::Data(_))));
    }
}

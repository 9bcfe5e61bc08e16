//! The `ivlm` command line: synth, curate, train, generate and eval.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors. Every
//! failure prints one `error: ...` line to standard error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::corpus::synth::{synth_corpus, SynthSpec, FINETUNE_MANIFEST, PRETRAIN_MANIFEST};
use crate::corpus::{curate, read_manifest, read_manifest_with_volumes, resolve_volume_path, write_manifest, CurationRule};
use crate::error::{Error, Result};
use crate::eval::{run_benchmark, write_records, ModelPredictor};
use crate::model::{Model, ModelConfig};
use crate::numerics::AdamWConfig;
use crate::training::{build_examples, induce_vocab, train_with, Lexicon, TrainCorpus, TrainSchedule};
use crate::volume::{read_header, read_volume};

pub const THREADS_ENV: &str = "IVLM_THREADS";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Lexicon file; the shipped default when absent.
    pub lexicon: Option<PathBuf>,
    /// Loss trace CSV; `<ckpt>.loss.csv` when absent.
    pub loss_trace: Option<PathBuf>,
}

/// Everything `train` needs besides the corpus.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub schedule: TrainSchedule,
    #[serde(default)]
    pub optimizer: AdamWConfig,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        cfg.model.validate()?;
        cfg.schedule.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Parser)]
#[command(name = "ivlm", version, about = "Interleaved volume-language model pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus: three manifests and their volumes
    Synth {
        /// Generator spec (JSON)
        #[arg(long)]
        spec: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Random seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Filter a manifest with curation rules
    Curate {
        /// Input manifest (JSON lines)
        #[arg(long = "in")]
        input: PathBuf,
        /// Rule file (JSON list of {name, pattern, action})
        #[arg(long)]
        rules: PathBuf,
        /// Output manifest
        #[arg(long)]
        out: PathBuf,
        /// Drop report (JSON)
        #[arg(long)]
        report: PathBuf,
    },
    /// Train a model on a synthetic corpus directory
    Train {
        /// Run config (JSON)
        #[arg(long)]
        config: PathBuf,
        /// Corpus directory holding pretrain.jsonl and finetune.jsonl
        #[arg(long)]
        corpus: PathBuf,
        /// Checkpoint to write; config and vocabulary sidecars go next to it
        #[arg(long)]
        out: PathBuf,
    },
    /// Continue a prompt given one or more volumes
    Generate {
        /// Checkpoint
        #[arg(long)]
        ckpt: PathBuf,
        /// File holding the prompt text
        #[arg(long)]
        prompt: PathBuf,
        /// Volume files, in placeholder order
        #[arg(long, num_args = 1.., required = true)]
        images: Vec<PathBuf>,
        /// Maximum number of generated tokens
        #[arg(long, default_value_t = 32)]
        max_new: usize,
    },
    /// Score a checkpoint on a test manifest
    Eval {
        /// Checkpoint
        #[arg(long)]
        ckpt: PathBuf,
        /// Test manifest (JSON lines)
        #[arg(long)]
        manifest: PathBuf,
        /// Lexicon file, one term per line
        #[arg(long)]
        lexicon: PathBuf,
        /// Metric report to write (JSON)
        #[arg(long)]
        out: PathBuf,
        /// Optional per-record dump (JSON lines)
        #[arg(long)]
        records: Option<PathBuf>,
        /// Bootstrap seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Maximum number of generated tokens per answer
        #[arg(long, default_value_t = 32)]
        max_new: usize,
    },
}

fn threads() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Usage(format!("{THREADS_ENV} must be a positive integer, got {s:?}"))),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Runs the CLI on `args` (including the program name), writing normal
/// output to `out`. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{}", e.render());
                return 0;
            }
            let msg = e.render().to_string();
            let first = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("{}", one_line(first));
            return 1;
        }
    };
    let result = threads().and_then(|n| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Usage(format!("cannot start thread pool: {e}")))?;
        pool.install(|| dispatch(cli.command))
    });
    match result {
        Ok(text) => match out.write_all(text.as_bytes()) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error: io error: {e}");
                2
            }
        },
        Err(e) => {
            eprintln!("error: {}", one_line(&e.to_string()));
            match e {
                Error::Usage(_) => 1,
                _ => 2,
            }
        }
    }
}

fn dispatch(command: Command) -> Result<String> {
    let mut buf = Vec::new();
    let out = &mut buf;
    match command {
        Command::Synth { spec, out: dir, seed } => {
            let spec = SynthSpec::load(&spec)?;
            let summary = synth_corpus(&spec, seed, &dir)?;
            writeln!(
                out,
                "wrote {} pretrain, {} finetune, {} test samples ({} volumes) to {}",
                summary.pretrain,
                summary.finetune,
                summary.test,
                summary.volumes,
                dir.display()
            )?;
        }
        Command::Curate { input, rules, out: dest, report } => {
            let rules = CurationRule::load_all(&rules)?;
            let pool = read_manifest(&input)?;
            let (kept, rep) = curate(pool, &rules, |s, k| {
                let path = resolve_volume_path(&input, &s.volume_paths[k]);
                match read_header(&path) {
                    Ok(h) => Ok(h.modality),
                    Err(e) => s.labels.modality.ok_or(e),
                }
            })?;
            write_manifest(&dest, &kept)?;
            std::fs::write(&report, serde_json::to_string_pretty(&rep)? + "\n")?;
            writeln!(out, "kept {} of {} samples", rep.kept, rep.input)?;
        }
        Command::Train { config, corpus, out: ckpt } => {
            let cfg = RunConfig::load(&config)?;
            let lexicon = match &cfg.paths.lexicon {
                Some(p) => Lexicon::load(p)?,
                None => Lexicon::default_terms(),
            };
            let split = |name: &str| -> Result<Vec<_>> {
                let path = corpus.join(name);
                if path.exists() {
                    read_manifest_with_volumes(&path)
                } else {
                    Ok(Vec::new())
                }
            };
            let pretrain = split(PRETRAIN_MANIFEST)?;
            let finetune = split(FINETUNE_MANIFEST)?;
            let vocab = induce_vocab(pretrain.iter().chain(&finetune).map(|(s, _)| s));
            let mut model = Model::new(cfg.model, vocab, cfg.seed)?;
            let nq = model.n_queries();
            let corpus = TrainCorpus {
                pretrain: build_examples(pretrain, &model.vocab, &lexicon, nq)?,
                finetune: build_examples(finetune, &model.vocab, &lexicon, nq)?,
            };
            let report = train_with(&mut model, &corpus, &cfg.schedule, &cfg.optimizer, cfg.seed, |_, _| {})?;
            model.save(&ckpt)?;
            let trace = cfg.paths.loss_trace.clone().unwrap_or_else(|| {
                let mut s = ckpt.as_os_str().to_owned();
                s.push(".loss.csv");
                PathBuf::from(s)
            });
            report.write_csv(&trace)?;
            writeln!(
                out,
                "trained {} steps, final loss {:.6}; checkpoint {}",
                report.trace.len(),
                report.final_loss().unwrap_or(f64::NAN),
                ckpt.display()
            )?;
        }
        Command::Generate { ckpt, prompt, images, max_new } => {
            let model = Model::load(&ckpt)?;
            let prompt = std::fs::read_to_string(&prompt)?;
            let volumes =
                images.iter().map(|p| model.prepare(&read_volume(p)?)).collect::<Result<Vec<_>>>()?;
            writeln!(out, "{}", model.generate(prompt.trim(), &volumes, max_new)?)?;
        }
        Command::Eval { ckpt, manifest, lexicon, out: dest, records, seed, max_new } => {
            let model = Model::load(&ckpt)?;
            let lexicon = Lexicon::load(&lexicon)?;
            let samples = read_manifest(&manifest)?;
            let predictor = ModelPredictor { model: &model, manifest: manifest.clone(), max_new };
            let (report, recs) = run_benchmark(&predictor, &samples, &lexicon, seed)?;
            std::fs::write(&dest, report.to_json()?)?;
            if let Some(path) = records {
                write_records(&path, &recs)?;
            }
            write!(out, "{}", report.to_table())?;
        }
    }
    Ok(String::from_utf8(buf).expect("utf-8 output"))
}

//! Synthesize a corpus, train the toy model for a few epochs, save and
//! reload the checkpoint, and score it on the benchmark.

use ivlm::corpus::read_manifest_with_volumes;
use ivlm::corpus::synth::{synth_corpus, SynthSpec, FINETUNE_MANIFEST, PRETRAIN_MANIFEST, TEST_MANIFEST};
use ivlm::eval::{run_benchmark, ModelPredictor};
use ivlm::model::{Model, ModelConfig};
use ivlm::numerics::AdamWConfig;
use ivlm::training::{build_examples, induce_vocab, train, Lexicon, TrainCorpus, TrainSchedule};

fn main() -> ivlm::Result<()> {
    let dir = std::env::temp_dir().join("ivlm-train-example");
    synth_corpus(&SynthSpec { count: 80, ..SynthSpec::default() }, 3, &dir)?;
    let pretrain = read_manifest_with_volumes(&dir.join(PRETRAIN_MANIFEST))?;
    let finetune = read_manifest_with_volumes(&dir.join(FINETUNE_MANIFEST))?;

    let vocab = induce_vocab(pretrain.iter().chain(&finetune).map(|(s, _)| s));
    let mut config = ModelConfig::toy();
    config.lm.max_len = 256;
    let mut model = Model::new(config, vocab, 3)?;
    let lexicon = Lexicon::default_terms();
    let nq = model.n_queries();
    let corpus = TrainCorpus {
        pretrain: build_examples(pretrain, &model.vocab, &lexicon, nq)?,
        finetune: build_examples(finetune, &model.vocab, &lexicon, nq)?,
    };
    let schedule = TrainSchedule { pretrain_epochs: 10, total_epochs: 30, ..TrainSchedule::default() };
    let opt = AdamWConfig { lr: 3e-3, ..AdamWConfig::default() };
    let report = train(&mut model, &corpus, &schedule, &opt, 3)?;
    for r in report.trace.iter().step_by(25) {
        println!("step {:>3}  phase {}  loss {:.3}", r.step, r.phase, r.loss);
    }

    let ckpt = dir.join("toy.ckpt");
    model.save(&ckpt)?;
    let model = Model::load(&ckpt)?;
    let manifest = dir.join(TEST_MANIFEST);
    let test: Vec<_> = read_manifest_with_volumes(&manifest)?.into_iter().map(|(s, _)| s).collect();
    let predictor = ModelPredictor { model: &model, manifest, max_new: 24 };
    let (bench, _) = run_benchmark(&predictor, &test, &lexicon, 0)?;
    println!("{}", bench.to_table());
    Ok(())
}

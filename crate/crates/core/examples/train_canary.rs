//! Overfit the desk model on 16 synthetic instruction samples and check that
//! greedy decoding reproduces every response. Takes a couple of minutes.

use std::time::Instant;

use ivlm::corpus::synth::{plan, realize, SynthSpec};
use ivlm::model::{Model, ModelConfig};
use ivlm::numerics::AdamWConfig;
use ivlm::training::{build_examples, induce_vocab, train_with, Lexicon, TrainCorpus, TrainSchedule};

fn main() -> ivlm::Result<()> {
    let spec = SynthSpec { count: 16, test_fraction: 0.0, finetune_fraction: 1.0, ..SynthSpec::default() };
    let items = plan(&spec, 1)?.iter().map(|p| realize(&spec, p, 1)).collect::<ivlm::Result<Vec<_>>>()?;
    let pairs: Vec<_> = items.into_iter().map(|i| (i.sample, i.volumes)).collect();
    let vocab = induce_vocab(pairs.iter().map(|(s, _)| s));
    let mut model = Model::new(ModelConfig::default(), vocab, 1)?;
    println!("{} parameters", model.params.num_scalars());

    let corpus = TrainCorpus {
        pretrain: vec![],
        finetune: build_examples(pairs.clone(), &model.vocab, &Lexicon::default_terms(), model.n_queries())?,
    };
    let schedule = TrainSchedule {
        phase1_epochs: 1,
        pretrain_epochs: 0,
        total_epochs: 1000,
        batch_size: 8,
        max_steps: Some(2000),
        stop_below: Some(0.002),
        warmup_steps: 100,
        cosine_decay: true,
        min_lr_ratio: 0.05,
        max_grad_norm: Some(1.0),
        ..TrainSchedule::default()
    };
    let opt = AdamWConfig { lr: 1e-3, weight_decay: 0.0, ..AdamWConfig::default() };
    let start = Instant::now();
    let report = train_with(&mut model, &corpus, &schedule, &opt, 1, |r, _| {
        if r.step % 100 == 0 {
            println!("step {:>4}  phase {}  loss {:.4}", r.step, r.phase, r.loss);
        }
    })?;
    println!("{} steps in {:.0?}", report.trace.len(), start.elapsed());

    let mut exact = 0;
    for (sample, volumes) in &pairs {
        let prepared = volumes.iter().map(|v| model.prepare(v)).collect::<ivlm::Result<Vec<_>>>()?;
        let got = model.generate(sample.instruction.as_deref().unwrap_or_default(), &prepared, 48)?;
        let want = sample.response.as_deref().unwrap_or_default();
        if got == want {
            exact += 1;
        } else {
            println!("mismatch on {}:\n  want {want}\n  got  {got}", sample.id);
        }
    }
    println!("{exact}/{} responses reproduced verbatim", pairs.len());
    Ok(())
}

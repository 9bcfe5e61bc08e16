//! Compare the tape's analytic gradients against central finite
//! differences for the whole toy model on one training example.

use ivlm::corpus::{Labels, Sample, Task};
use ivlm::model::{Model, ModelConfig};
use ivlm::numerics::gradcheck::check_params;
use ivlm::training::{build_examples, induce_vocab, sequence_loss, Lexicon};
use ivlm::volume::{Modality, Volume};

fn main() -> ivlm::Result<()> {
    let sample = Sample::interleaved(
        "s",
        Task::FreeInterleaved,
        "axial slice <image-1> shows edema near the nodule",
        vec!["v.vol".into()],
        Labels::default(),
    );
    let raw = Volume::from_fn([12, 12, 6, 1], Modality::Mri, false, |i, j, k, _| ((i * 7 + j * 3 + k) % 11) as f64)?;
    let vocab = induce_vocab([&sample]);
    let model = Model::new(ModelConfig::toy(), vocab, 1)?;
    let example = build_examples(vec![(sample, vec![raw])], &model.vocab, &Lexicon::default_terms(), model.n_queries())?.remove(0);
    let prepared = model.prepare(&example.volumes[0])?;

    let report = check_params(
        &model.params,
        |tape, params| {
            let m = Model { params: params.clone(), ..model.clone() };
            let visual = m.visual_on_tape(tape, std::slice::from_ref(&prepared))?;
            let (logits, _) = m.logits_on_tape(tape, &example.seq.ids, &visual)?;
            sequence_loss(tape, logits, &example.seq)
        },
        Some(6),
        0,
    )?;
    println!(
        "{} parameter tensors, {} entries probed, max relative error {:.2e} at {:?}",
        model.params.len(),
        report.checked,
        report.max_rel_error,
        report.worst
    );
    Ok(())
}

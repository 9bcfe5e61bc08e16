//! Per-token loss weights: medical terms 3, other supervised text 1, and
//! everything else (instructions, image spans, BOS) 0.

use ivlm::corpus::{Labels, Sample, Task};
use ivlm::language::Slot;
use ivlm::training::{assign_weights, induce_vocab, Lexicon};

fn main() -> ivlm::Result<()> {
    let lexicon = Lexicon::default_terms();
    let samples = [
        Sample::interleaved(
            "report",
            Task::FreeInterleaved,
            "Frontal radiograph <image-1> demonstrates cardiomegaly and a small pleural effusion.",
            vec!["a.vol".into()],
            Labels::default(),
        ),
        Sample::instruction(
            "qa",
            Task::Vqa,
            "<image-1> Which abnormality is visible in the left lung?",
            "A nodule with surrounding consolidation.",
            vec!["b.vol".into()],
            Labels::default(),
        ),
    ];
    let vocab = induce_vocab(samples.iter());
    for s in &samples {
        let seq = assign_weights(s, &vocab, &lexicon, 4)?;
        println!("{} ({:?}):", s.id, s.kind);
        let cells: Vec<String> = seq
            .layout
            .slots
            .iter()
            .zip(&seq.weights)
            .map(|(slot, w)| match slot {
                Slot::Token(id) => format!("{}:{w}", vocab.token(*id)),
                Slot::Visual { row, .. } => format!("v{row}:{w}"),
            })
            .collect();
        println!("  {}", cells.join(" "));
    }
    Ok(())
}

//! Filter samples with the shipped curation rules, then balance yes/no
//! judgments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ivlm::corpus::{balance_judgments, curate, default_rules, judgment_answer, Labels, Sample, Task};
use ivlm::volume::Modality;

fn labelled(m: Modality) -> Labels {
    Labels { modality: Some(m), ..Labels::default() }
}

fn main() -> ivlm::Result<()> {
    let pool = vec![
        Sample::interleaved("a", Task::FreeInterleaved, "A 64-year-old woman. <image-1> Right lower lobe consolidation.", vec!["a.vol".into()], labelled(Modality::XRay)),
        Sample::interleaved("b", Task::FreeInterleaved, "The lesion measures 14 mm. <image-1> No effusion.", vec!["b.vol".into()], labelled(Modality::Ct)),
        Sample::interleaved("c", Task::FreeInterleaved, "Dermoscopy <image-1> of a pigmented lesion.", vec!["c.vol".into()], labelled(Modality::Other)),
        Sample::instruction("d", Task::Vqa, "<image-1> How large is the nodule?", "About 8mm.", vec!["d.vol".into()], labelled(Modality::Ct)),
    ];
    let (kept, report) = curate(pool, &default_rules(), |s, _| Ok(s.labels.modality.unwrap_or(Modality::Other)))?;
    for s in &kept {
        println!("kept {}: {}", s.id, s.text);
    }
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));

    let answers = ["yes"; 9].into_iter().chain(["no"; 3]);
    let judgments: Vec<Sample> = answers
        .enumerate()
        .map(|(i, a)| Sample::instruction(format!("j{i}"), Task::DiseaseDiagnosis, "<image-1> Is there a fracture?", a, vec!["x.vol".into()], Labels::default()))
        .collect();
    let balanced = balance_judgments(judgments, &mut ChaCha8Rng::seed_from_u64(1))?;
    let yes = balanced.iter().filter(|s| judgment_answer(s) == Some(true)).count();
    println!("balanced 9 yes / 3 no to {yes} yes / {} no", balanced.len() - yes);
    Ok(())
}

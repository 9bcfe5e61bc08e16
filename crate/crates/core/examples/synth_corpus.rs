//! Generate a synthetic corpus and check that every label can be read back
//! from the voxels.

use ivlm::corpus::read_manifest_with_volumes;
use ivlm::corpus::synth::{decode_labels, synth_corpus, SynthSpec, FINETUNE_MANIFEST, PRETRAIN_MANIFEST, TEST_MANIFEST};

fn main() -> ivlm::Result<()> {
    let out = std::env::temp_dir().join("ivlm-synth-example");
    let spec = SynthSpec { count: 60, ..SynthSpec::default() };
    let summary = synth_corpus(&spec, 42, &out)?;
    println!("{summary:?} written to {}", out.display());

    let mut decoded = 0;
    for manifest in [PRETRAIN_MANIFEST, FINETUNE_MANIFEST, TEST_MANIFEST] {
        for (sample, volumes) in read_manifest_with_volumes(&out.join(manifest))? {
            for v in &volumes {
                let (modality, diseases) = decode_labels(v, &spec.diseases);
                assert_eq!(Some(modality), sample.labels.modality, "{}", sample.id);
                assert_eq!(diseases, sample.labels.diseases, "{}", sample.id);
                decoded += 1;
            }
        }
    }
    println!("{decoded} volumes decoded back to their labels");

    let first = read_manifest_with_volumes(&out.join(FINETUNE_MANIFEST))?;
    for (s, _) in first.iter().take(5) {
        println!("[{}] {}", s.task, s.text);
    }
    Ok(())
}

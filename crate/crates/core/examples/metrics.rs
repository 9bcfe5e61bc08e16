//! The benchmark's text metrics on a few prediction/reference pairs.

use ivlm::eval::{bleu1, resolve_closed, rouge1, similarity_ratio, umls_precision_recall};
use ivlm::training::Lexicon;

fn main() -> ivlm::Result<()> {
    let lexicon = Lexicon::default_terms();
    let pairs = [
        ("Small left pleural effusion with atelectasis.", "Left pleural effusion and basal atelectasis."),
        ("No acute findings.", "Cardiomegaly without effusion."),
        ("the the the", "the cat"),
    ];
    for (pred, reference) in pairs {
        let (p, r) = umls_precision_recall(pred, reference, &lexicon);
        println!("pred: {pred}\nref:  {reference}");
        println!(
            "  bleu1 {:.3}  rouge1 {:.3}  ratio {:.3}  umls p {p:.3} r {r:.3}",
            bleu1(pred, reference),
            rouge1(pred, reference)?,
            similarity_ratio(pred, reference)
        );
    }

    let modalities: Vec<String> = ["CT", "MRI", "Ultrasound", "PET", "X-ray", "Angiography"].map(String::from).to_vec();
    for answer in ["The modality is CT.", "looks like an mri scan", "x ray", "ultrasonography"] {
        println!("{answer:?} -> {}", resolve_closed(answer, &modalities)?);
    }
    Ok(())
}

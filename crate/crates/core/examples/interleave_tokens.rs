//! Tokenize interleaved text and show how each image placeholder expands
//! into a visual span of the language model's input sequence.

use ivlm::language::{plan_layout, Slot, Vocabulary};

fn main() -> ivlm::Result<()> {
    let text = "The axial CT <image-1> shows a 58-year-old's pleural effusion, unlike the prior <image-2>.";
    let vocab = Vocabulary::induce([text], 2);
    let ids = vocab.tokenize(text);
    println!("vocabulary of {} entries", vocab.len());
    println!("ids: {ids:?}");
    println!("round trip: {}", vocab.detokenize(&ids));

    let n_queries = 32;
    let layout = plan_layout(&ids, &vocab, n_queries, 2)?;
    println!("{} ids -> {} positions", ids.len(), layout.len());
    for span in &layout.visual_spans {
        println!("image {} fills positions {}..{}", span.image, span.start, span.end);
    }
    let rendered: Vec<String> = layout
        .slots
        .iter()
        .filter(|s| !matches!(s, Slot::Visual { row, .. } if *row > 0))
        .map(|s| match s {
            Slot::Token(id) => vocab.token(*id),
            Slot::Visual { image, .. } => format!("[{n_queries} rows of image {image}]"),
        })
        .collect();
    println!("{}", rendered.join(" "));
    Ok(())
}

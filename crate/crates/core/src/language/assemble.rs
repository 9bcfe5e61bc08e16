use crate::error::{Error, Result};
use crate::numerics::{ModelParams, Tape, Var};

use super::lm::TOK_EMB;
use super::vocab::{Vocabulary, IMG_CLOSE, IMG_OPEN};

/// What occupies one position of the interleaved sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Token(u32),
    /// Row `row` of the resampled embedding of image `image` (1-based).
    Visual { image: usize, row: usize },
}

impl Slot {
    pub fn token(self) -> Option<u32> {
        match self {
            Slot::Token(id) => Some(id),
            Slot::Visual { .. } => None,
        }
    }
}

/// Positions `start..end` hold the visual rows of `image`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VisualSpan {
    pub start: usize,
    pub end: usize,
    pub image: usize,
}

/// Interleaved position layout: every placeholder expands to
/// `IMG_OPEN, n_queries visual rows, IMG_CLOSE`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub slots: Vec<Slot>,
    pub visual_spans: Vec<VisualSpan>,
    /// For each input id, the index of its first slot.
    pub source_offsets: Vec<usize>,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

/// Expands placeholder ids. `n_images` is the number of available visual
/// embeddings: every placeholder must refer to one of them and the counts
/// must agree.
pub fn plan_layout(ids: &[u32], vocab: &Vocabulary, n_queries: usize, n_images: usize) -> Result<Layout> {
    let mut slots = Vec::with_capacity(ids.len() + n_images * (n_queries + 2));
    let mut visual_spans = Vec::new();
    let mut source_offsets = Vec::with_capacity(ids.len());
    for &id in ids {
        source_offsets.push(slots.len());
        match vocab.placeholder_index(id) {
            Some(image) => {
                if image > n_images {
                    return Err(Error::data(format!(
                        "placeholder <image-{image}> but only {n_images} image(s) supplied"
                    )));
                }
                slots.push(Slot::Token(IMG_OPEN));
                let start = slots.len();
                slots.extend((0..n_queries).map(|row| Slot::Visual { image, row }));
                visual_spans.push(VisualSpan { start, end: slots.len(), image });
                slots.push(Slot::Token(IMG_CLOSE));
            }
            None => slots.push(Slot::Token(id)),
        }
    }
    if visual_spans.len() != n_images {
        return Err(Error::data(format!(
            "{} placeholder(s) in text but {n_images} image(s) supplied",
            visual_spans.len()
        )));
    }
    Ok(Layout { slots, visual_spans, source_offsets })
}

/// Interleaved embedding sequence recorded on a tape.
#[derive(Debug, Clone)]
pub struct AssembledSequence {
    pub embeddings: Var,
    pub layout: Layout,
}

/// Builds the `L × dim` embedding matrix: text slots come from the token
/// embedding table, visual spans from `visual[image - 1]`.
pub fn assemble(
    tape: &mut Tape,
    params: &ModelParams,
    layout: Layout,
    visual: &[Var],
    max_len: usize,
) -> Result<AssembledSequence> {
    if layout.len() > max_len {
        return Err(Error::data(format!(
            "assembled sequence has {} positions, limit is {max_len}",
            layout.len()
        )));
    }
    if layout.visual_spans.len() != visual.len() {
        return Err(Error::data(format!(
            "{} visual span(s) but {} visual embedding(s)",
            layout.visual_spans.len(),
            visual.len()
        )));
    }
    let table = tape.param(params, TOK_EMB)?;
    let mut parts = Vec::new();
    let mut pos = 0;
    let mut run: Vec<usize> = Vec::new();
    let flush = |tape: &mut Tape, run: &mut Vec<usize>, parts: &mut Vec<Var>| -> Result<()> {
        if !run.is_empty() {
            parts.push(tape.gather_rows(table, run)?);
            run.clear();
        }
        Ok(())
    };
    for span in &layout.visual_spans {
        for slot in &layout.slots[pos..span.start] {
            run.push(slot.token().expect("text slot") as usize);
        }
        flush(tape, &mut run, &mut parts)?;
        let emb = visual[span.image - 1];
        let rows = tape.shape(emb)[0];
        if rows != span.end - span.start {
            return Err(Error::shape(format!(
                "visual embedding for image {} has {rows} rows, layout expects {}",
                span.image,
                span.end - span.start
            )));
        }
        parts.push(emb);
        pos = span.end;
    }
    for slot in &layout.slots[pos..] {
        run.push(slot.token().expect("text slot") as usize);
    }
    flush(tape, &mut run, &mut parts)?;
    let embeddings = if parts.len() == 1 { parts[0] } else { tape.concat_rows(&parts)? };
    Ok(AssembledSequence { embeddings, layout })
}

use std::collections::BTreeMap;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::language::tokenize::{placeholder, split_pieces, Piece};
use crate::volume::Modality;

use super::{join_instruction, Sample, SampleKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleAction {
    /// Delete every sentence the pattern matches; placeholders in it stay.
    RemoveSentence,
    /// Drop the sample if the pattern matches anywhere in its text.
    DropSample,
    /// Drop the sample if any volume's modality name matches the pattern.
    DropModality,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurationRule {
    pub name: String,
    pub pattern: String,
    pub action: RuleAction,
}

impl CurationRule {
    pub fn load_all(path: &Path) -> Result<Vec<CurationRule>> {
        let rules: Vec<CurationRule> = serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        Ok(rules)
    }
}

/// Non-radiologic volumes, structure sizes and patient ages.
pub fn default_rules() -> Vec<CurationRule> {
    serde_json::from_str(include_str!("../../data/curation_rules.json")).expect("shipped rules parse")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleCount {
    pub samples_dropped: usize,
    pub sentences_removed: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationReport {
    pub input: usize,
    pub kept: usize,
    /// Instruction samples dropped because filtering emptied the response.
    pub empty_response: usize,
    pub rules: BTreeMap<String, RuleCount>,
}

struct Compiled<'a> {
    rule: &'a CurationRule,
    re: Regex,
}

/// Splits after `.`, `!` or `?` followed by whitespace.
fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') && chars.peek().is_none_or(|(_, n)| n.is_whitespace()) {
            let end = i + c.len_utf8();
            let s = text[start..end].trim();
            if !s.is_empty() {
                out.push(s);
            }
            start = end;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

/// Applies sentence-removal rules; returns `None` if nothing matched.
fn filter_text(text: &str, rules: &[Compiled], report: &mut CurationReport) -> Option<String> {
    let mut changed = false;
    let mut kept: Vec<String> = Vec::new();
    for sentence in sentences(text) {
        let hit = rules.iter().find(|c| c.rule.action == RuleAction::RemoveSentence && c.re.is_match(sentence));
        match hit {
            Some(c) => {
                changed = true;
                report.rules.entry(c.rule.name.clone()).or_default().sentences_removed += 1;
                let images: Vec<String> = split_pieces(sentence)
                    .into_iter()
                    .filter_map(|p| match p {
                        Piece::Placeholder(i) => Some(placeholder(i)),
                        Piece::Word(_) => None,
                    })
                    .collect();
                if !images.is_empty() {
                    kept.push(images.join(" "));
                }
            }
            None => kept.push(sentence.to_string()),
        }
    }
    changed.then(|| kept.join(" "))
}

/// Filters `pool` by `rules`. `modality_of(sample, k)` reports the modality
/// of the sample's k-th volume. Samples are dropped by the first matching
/// drop rule; removed sentences are credited to the first matching rule.
pub fn curate(
    pool: Vec<Sample>,
    rules: &[CurationRule],
    modality_of: impl Fn(&Sample, usize) -> Result<Modality>,
) -> Result<(Vec<Sample>, CurationReport)> {
    let compiled: Vec<Compiled> = rules
        .iter()
        .map(|rule| {
            let re = Regex::new(&rule.pattern)
                .map_err(|e| Error::invalid(format!("rule {}: bad pattern: {e}", rule.name)))?;
            Ok(Compiled { rule, re })
        })
        .collect::<Result<_>>()?;

    let mut report = CurationReport { input: pool.len(), ..Default::default() };
    for rule in rules {
        report.rules.entry(rule.name.clone()).or_default();
    }
    let mut out = Vec::with_capacity(pool.len());
    'samples: for mut sample in pool {
        for c in &compiled {
            let drop = match c.rule.action {
                RuleAction::RemoveSentence => false,
                RuleAction::DropSample => c.re.is_match(&sample.text),
                RuleAction::DropModality => {
                    let mut any = false;
                    for k in 0..sample.volume_paths.len() {
                        if c.re.is_match(modality_of(&sample, k)?.name()) {
                            any = true;
                            break;
                        }
                    }
                    any
                }
            };
            if drop {
                report.rules.get_mut(&c.rule.name).expect("seeded").samples_dropped += 1;
                continue 'samples;
            }
        }
        match sample.kind {
            SampleKind::Interleaved => {
                if let Some(t) = filter_text(&sample.text, &compiled, &mut report) {
                    sample.text = t;
                }
            }
            SampleKind::Instruction => {
                let instruction = sample.instruction.clone().unwrap_or_default();
                let response = sample.response.clone().unwrap_or_default();
                let new_i = filter_text(&instruction, &compiled, &mut report);
                let new_r = filter_text(&response, &compiled, &mut report);
                if new_i.is_some() || new_r.is_some() {
                    let i = new_i.unwrap_or(instruction);
                    let r = new_r.unwrap_or(response);
                    if r.trim().is_empty() {
                        report.empty_response += 1;
                        continue 'samples;
                    }
                    sample.text = join_instruction(&i, &r);
                    sample.instruction = Some(i);
                    sample.response = Some(r);
                }
            }
        }
        out.push(sample);
    }
    report.kept = out.len();
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Labels, Task};

    fn by_label(s: &Sample, _k: usize) -> Result<Modality> {
        Ok(s.labels.modality.unwrap_or(Modality::Ct))
    }

    fn interleaved(text: &str, m: Modality) -> Sample {
        let n = (1..).take_while(|i| text.contains(&format!("<image-{i}>"))).count();
        let labels = Labels { modality: Some(m), ..Default::default() };
        Sample::interleaved("x", Task::FreeInterleaved, text, (0..n).map(|i| format!("v{i}")).collect(), labels)
    }

    #[test]
    fn size_sentence_removed_sample_kept() {
        let s = interleaved("There is a 3 cm mass. The lung is clear.", Modality::Ct);
        let (out, rep) = curate(vec![s], &default_rules(), by_label).unwrap();
        assert_eq!(out[0].text, "The lung is clear.");
        assert_eq!(rep.rules["size"].sentences_removed, 1);
    }

    #[test]
    fn other_modality_dropped() {
        let s = interleaved("A photo <image-1>.", Modality::Other);
        let (out, rep) = curate(vec![s], &default_rules(), by_label).unwrap();
        assert!(out.is_empty());
        assert_eq!(rep.rules["non_radiology"].samples_dropped, 1);
    }

    #[test]
    fn clean_sample_unchanged_even_with_odd_spacing() {
        let s = interleaved("Edema  is seen <image-1>.   Nothing else.", Modality::Mri);
        let (out, _) = curate(vec![s.clone()], &default_rules(), by_label).unwrap();
        assert_eq!(out, vec![s]);
    }

    #[test]
    fn placeholders_survive_removed_sentences() {
        let s = interleaved("A 58-year-old man <image-1>. Edema is present.", Modality::Ct);
        let (out, rep) = curate(vec![s], &default_rules(), by_label).unwrap();
        assert_eq!(out[0].text, "<image-1> Edema is present.");
        out[0].validate().unwrap();
        assert_eq!(rep.rules["age"].sentences_removed, 1);
    }

    #[test]
    fn emptied_response_drops_instruction_sample() {
        let s = Sample::instruction("i", Task::Vqa, "Size? <image-1>", "It measures 12mm.", vec!["v".into()], Labels::default());
        let (out, rep) = curate(vec![s], &default_rules(), by_label).unwrap();
        assert!(out.is_empty());
        assert_eq!(rep.empty_response, 1);
    }

    #[test]
    fn curation_is_idempotent() {
        let pool = vec![
            interleaved("A 12mm nodule <image-1>. A 3.5 cm cyst. Fine.", Modality::Ct),
            interleaved("Plain text. 40-year-old woman.", Modality::Pet),
        ];
        let (once, _) = curate(pool, &default_rules(), by_label).unwrap();
        let (twice, _) = curate(once.clone(), &default_rules(), by_label).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn sentence_splitter_keeps_decimals() {
        assert_eq!(sentences("A 3.5 cm cyst. Next! Last"), vec!["A 3.5 cm cyst.", "Next!", "Last"]);
    }
}

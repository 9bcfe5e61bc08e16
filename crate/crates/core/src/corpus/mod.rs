//! Samples and manifests, prompt templates for the five instruction tasks,
//! judgment balancing, rule-based curation and the synthetic corpus
//! generator.

mod balance;
mod curate;
mod manifest;
pub mod synth;
mod templates;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::language::tokenize::{split_pieces, Piece};
use crate::volume::Modality;

pub use balance::{balance_judgments, judgment_answer};
pub use curate::{curate, default_rules, CurationReport, CurationRule, RuleAction, RuleCount};
pub use manifest::{read_manifest, read_manifest_with_volumes, resolve_volume_path, write_manifest};
pub use templates::{default_templates, rationale_features, region_name, render_prompt, Form, PromptTemplate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    Interleaved,
    Instruction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    ModalityRecognition,
    DiseaseDiagnosis,
    Vqa,
    ReportGeneration,
    RationaleDiagnosis,
    FreeInterleaved,
}

impl Task {
    /// The five benchmark tasks, in report order.
    pub const BENCHMARK: [Task; 5] = [
        Task::ModalityRecognition,
        Task::DiseaseDiagnosis,
        Task::Vqa,
        Task::ReportGeneration,
        Task::RationaleDiagnosis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::ModalityRecognition => "modality_recognition",
            Task::DiseaseDiagnosis => "disease_diagnosis",
            Task::Vqa => "vqa",
            Task::ReportGeneration => "report_generation",
            Task::RationaleDiagnosis => "rationale_diagnosis",
            Task::FreeInterleaved => "free_interleaved",
        }
    }

    /// Tasks answered against a closed candidate list.
    pub fn is_closed(self) -> bool {
        matches!(self, Task::ModalityRecognition | Task::DiseaseDiagnosis)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Ground truth attached to a sample.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Labels {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modality: Option<Modality>,
    /// Presence of every known disease.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub diseases: BTreeMap<String, bool>,
    /// Region name of each present disease.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub regions: BTreeMap<String, String>,
}

impl Labels {
    pub fn positives(&self) -> impl Iterator<Item = &str> {
        self.diseases.iter().filter(|(_, &p)| p).map(|(d, _)| d.as_str())
    }
}

/// One corpus record. For instruction samples `text` is
/// `instruction + " " + response`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub id: String,
    pub kind: SampleKind,
    pub task: Task,
    pub text: String,
    pub instruction: Option<String>,
    pub response: Option<String>,
    pub volume_paths: Vec<String>,
    #[serde(default)]
    pub labels: Labels,
}

impl Sample {
    pub fn instruction(
        id: impl Into<String>,
        task: Task,
        instruction: impl Into<String>,
        response: impl Into<String>,
        volume_paths: Vec<String>,
        labels: Labels,
    ) -> Self {
        let instruction = instruction.into();
        let response = response.into();
        Sample {
            id: id.into(),
            kind: SampleKind::Instruction,
            task,
            text: join_instruction(&instruction, &response),
            instruction: Some(instruction),
            response: Some(response),
            volume_paths,
            labels,
        }
    }

    pub fn interleaved(id: impl Into<String>, task: Task, text: impl Into<String>, volume_paths: Vec<String>, labels: Labels) -> Self {
        Sample {
            id: id.into(),
            kind: SampleKind::Interleaved,
            task,
            text: text.into(),
            instruction: None,
            response: None,
            volume_paths,
            labels,
        }
    }

    /// 1-based placeholder indices in order of appearance.
    pub fn placeholders(&self) -> Vec<usize> {
        split_pieces(&self.text)
            .into_iter()
            .filter_map(|p| match p {
                Piece::Placeholder(i) => Some(i),
                Piece::Word(_) => None,
            })
            .collect()
    }

    /// Checks the structural invariants: instruction samples carry both
    /// parts and `text` is their join; placeholders `1..=N` each appear once
    /// with `N` volumes.
    pub fn validate(&self) -> Result<()> {
        if self.kind == SampleKind::Instruction {
            let (Some(i), Some(r)) = (&self.instruction, &self.response) else {
                return Err(Error::data(format!(
                    "sample {}: instruction sample needs both instruction and response",
                    self.id
                )));
            };
            if self.text != join_instruction(i, r) {
                return Err(Error::data(format!("sample {}: text is not instruction + response", self.id)));
            }
        }
        let mut seen = self.placeholders();
        seen.sort_unstable();
        let expect: Vec<usize> = (1..=self.volume_paths.len()).collect();
        if seen != expect {
            return Err(Error::data(format!(
                "sample {}: placeholders {:?} do not match {} volume(s)",
                self.id,
                seen,
                self.volume_paths.len()
            )));
        }
        Ok(())
    }

    /// The yes/no answer of a judgment sample, if it is one.
    pub fn judgment(&self) -> Option<bool> {
        judgment_answer(self)
    }
}

pub fn join_instruction(instruction: &str, response: &str) -> String {
    format!("{instruction} {response}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_invariants() {
        let s = Sample::instruction("a", Task::Vqa, "where? <image-1>", "left.", vec!["v.vol".into()], Labels::default());
        s.validate().unwrap();
        assert_eq!(s.text, "where? <image-1> left.");

        let mut bad = s.clone();
        bad.text.push('x');
        assert!(bad.validate().is_err());

        let mut bad = s.clone();
        bad.response = None;
        assert!(bad.validate().is_err());

        let dup = Sample::interleaved("b", Task::FreeInterleaved, "<image-1> and <image-1>", vec!["a".into(), "b".into()], Labels::default());
        assert!(dup.validate().is_err());
        let ok = Sample::interleaved("c", Task::FreeInterleaved, "<image-2> then <image-1>", vec!["a".into(), "b".into()], Labels::default());
        ok.validate().unwrap();
    }

    #[test]
    fn manifest_fields_are_stable() {
        let mut labels = Labels { modality: Some(Modality::Ct), ..Default::default() };
        labels.diseases.insert("edema".into(), true);
        let s = Sample::instruction("s1", Task::DiseaseDiagnosis, "<image-1> Is edema shown in this image?", "yes", vec!["volumes/s1_0.vol".into()], labels);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(
            json,
            r#"{"id":"s1","kind":"instruction","task":"disease_diagnosis","text":"<image-1> Is edema shown in this image? yes","instruction":"<image-1> Is edema shown in this image?","response":"yes","volume_paths":["volumes/s1_0.vol"],"labels":{"modality":"CT","diseases":{"edema":true}}}"#
        );
        let back: Sample = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }
}

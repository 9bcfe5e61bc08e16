use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Modality;

use super::{Labels, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    Judgment,
    Open,
}

/// An instruction pattern. `{modality}` and `{disease}` slots are filled
/// with the candidate under judgment; `<image-i>` placeholders pass through.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub task: Task,
    pub form: Form,
    pub pattern: String,
}

impl PromptTemplate {
    pub fn new(task: Task, form: Form, pattern: impl Into<String>) -> Result<Self> {
        let pattern = pattern.into();
        let has_slot = pattern.contains("{modality}") || pattern.contains("{disease}");
        if !has_slot && !pattern.contains("<image-") {
            return Err(Error::invalid(format!("template {pattern:?} has neither a placeholder nor a slot")));
        }
        Ok(PromptTemplate { task, form, pattern })
    }

    /// Number of images the pattern refers to.
    pub fn images(&self) -> usize {
        (1..).take_while(|i| self.pattern.contains(&format!("<image-{i}>"))).count()
    }
}

/// The built-in template set, one or more per task and form.
pub fn default_templates() -> Vec<PromptTemplate> {
    let t = |task, form, p: &str| PromptTemplate { task, form, pattern: p.to_string() };
    vec![
        t(Task::ModalityRecognition, Form::Judgment, "<image-1> Is this image shot by {modality}?"),
        t(Task::ModalityRecognition, Form::Open, "What's the modality of the input scan <image-1>?"),
        t(Task::DiseaseDiagnosis, Form::Judgment, "<image-1> Is {disease} shown in this image?"),
        t(Task::DiseaseDiagnosis, Form::Open, "Please make diagnosis based on the image <image-1>."),
        t(Task::Vqa, Form::Open, "Where is the lesion located in <image-1>?"),
        t(Task::Vqa, Form::Open, "Which abnormality can be seen in <image-1>?"),
        t(Task::ReportGeneration, Form::Open, "What can you find from the scans <image-1> <image-2>?"),
        t(Task::ReportGeneration, Form::Open, "What can you find from the scan <image-1>?"),
        t(
            Task::RationaleDiagnosis,
            Form::Open,
            "Determine the disease that the image shows and describe the characteristic radiologic features. <image-1>",
        ),
    ]
}

const ROWS: [&str; 4] = ["upper", "upper-middle", "lower-middle", "lower"];
const COLS: [&str; 4] = ["left", "center-left", "center-right", "right"];

/// Name of cell `k` of the 4×4 grid used by the synthetic generator.
pub fn region_name(cell: usize) -> String {
    format!("{} {}", ROWS[(cell / 4) % 4], COLS[cell % 4])
}

/// Characteristic features quoted by rationale responses.
pub fn rationale_features(disease: &str) -> &'static str {
    match disease {
        "edema" => "diffuse interstitial opacity with thickened septal lines",
        "pneumothorax" => "a lucent pleural space without lung markings",
        "pneumonia" => "focal consolidation with air bronchograms",
        "effusion" | "pleural effusion" => "a dependent fluid density blunting the costophrenic angle",
        "nodule" => "a well-circumscribed round opacity",
        "fracture" => "a cortical discontinuity with sharp margins",
        "hemorrhage" => "a hyperdense collection with surrounding edema",
        "tumor" | "mass" => "a lobulated mass with heterogeneous enhancement",
        "atelectasis" => "volume loss with displaced fissures",
        "cardiomegaly" => "an enlarged cardiac silhouette",
        _ => "a focal region of abnormal density",
    }
}

fn modality_text(m: Modality) -> String {
    m.name().to_lowercase()
}

fn need_modality(labels: &Labels) -> Result<Modality> {
    labels.modality.ok_or_else(|| Error::data("template needs a modality label"))
}

fn need_diseases(labels: &Labels) -> Result<()> {
    if labels.diseases.is_empty() {
        return Err(Error::data("template needs disease labels"));
    }
    Ok(())
}

fn finding_phrase(labels: &Labels) -> Vec<String> {
    labels
        .positives()
        .map(|d| match labels.regions.get(d) {
            Some(r) => format!("{d} in the {r} region"),
            None => d.to_string(),
        })
        .collect()
}

/// Renders `(instruction, response)`. Judgment forms sample one candidate
/// uniformly (radiologic modalities, or the labelled diseases) and answer
/// "yes" iff it is true for the labels.
pub fn render_prompt(template: &PromptTemplate, labels: &Labels, rng: &mut impl Rng) -> Result<(String, String)> {
    match template.form {
        Form::Judgment => {
            let candidate = match template.task {
                Task::ModalityRecognition => {
                    let truth = need_modality(labels)?;
                    let m = *Modality::RADIOLOGIC.choose(rng).expect("non-empty");
                    (m.name().to_string(), m == truth)
                }
                Task::DiseaseDiagnosis => {
                    need_diseases(labels)?;
                    let names: Vec<&String> = labels.diseases.keys().collect();
                    let d = *names.choose(rng).expect("non-empty");
                    (d.clone(), labels.diseases[d])
                }
                other => return Err(Error::invalid(format!("task {other} has no judgment form"))),
            };
            judgment_with(template, &candidate.0, candidate.1)
        }
        Form::Open => Ok((template.pattern.clone(), open_response(template, labels)?)),
    }
}

/// Judgment rendering with a chosen candidate.
pub(crate) fn judgment_with(template: &PromptTemplate, candidate: &str, truth: bool) -> Result<(String, String)> {
    let instruction = template.pattern.replace("{modality}", candidate).replace("{disease}", candidate);
    Ok((instruction, if truth { "yes" } else { "no" }.to_string()))
}

fn open_response(template: &PromptTemplate, labels: &Labels) -> Result<String> {
    Ok(match template.task {
        Task::ModalityRecognition => modality_text(need_modality(labels)?),
        Task::DiseaseDiagnosis => {
            need_diseases(labels)?;
            let pos: Vec<&str> = labels.positives().collect();
            if pos.is_empty() {
                "normal".to_string()
            } else {
                pos.join(", ")
            }
        }
        Task::Vqa => {
            need_diseases(labels)?;
            let first = labels.positives().next();
            if template.pattern.starts_with("Where") {
                match first {
                    Some(d) => match labels.regions.get(d) {
                        Some(r) => format!("the {d} is located in the {r} region."),
                        None => format!("the {d} is visible in the scan."),
                    },
                    None => "no lesion is seen.".to_string(),
                }
            } else {
                match first {
                    Some(d) => format!("{d} can be seen."),
                    None => "no abnormality can be seen.".to_string(),
                }
            }
        }
        Task::ReportGeneration => {
            let m = modality_text(need_modality(labels)?);
            need_diseases(labels)?;
            let findings = finding_phrase(labels);
            if findings.is_empty() {
                format!("{m} scan with no acute abnormality.")
            } else {
                format!("{m} scan showing {}.", findings.join(" and "))
            }
        }
        Task::RationaleDiagnosis => {
            need_diseases(labels)?;
            match labels.positives().next() {
                Some(d) => format!("{d}. the scan shows {}.", rationale_features(d)),
                None => "normal. the scan shows no abnormal density.".to_string(),
            }
        }
        Task::FreeInterleaved => return Err(Error::invalid("free interleaved text has no prompt template")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn labels(pos: &[&str], neg: &[&str]) -> Labels {
        let mut l = Labels { modality: Some(Modality::Mri), ..Default::default() };
        for d in pos {
            l.diseases.insert(d.to_string(), true);
        }
        for d in neg {
            l.diseases.insert(d.to_string(), false);
        }
        l
    }

    fn find(task: Task, form: Form) -> PromptTemplate {
        default_templates().into_iter().find(|t| t.task == task && t.form == form).unwrap()
    }

    #[test]
    fn open_diagnosis_lists_positives() {
        let t = find(Task::DiseaseDiagnosis, Form::Open);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (i, r) = render_prompt(&t, &labels(&["edema", "pneumothorax"], &["nodule"]), &mut rng).unwrap();
        assert_eq!(i, "Please make diagnosis based on the image <image-1>.");
        assert_eq!(r, "edema, pneumothorax");
    }

    #[test]
    fn judgment_answers_match_truth() {
        let t = find(Task::DiseaseDiagnosis, Form::Judgment);
        let l = labels(&["edema"], &["nodule", "fracture"]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (i, r) = render_prompt(&t, &l, &mut rng).unwrap();
            assert_eq!(r == "yes", i.contains("edema"), "{i} -> {r}");
        }
    }

    #[test]
    fn modality_open_and_judgment() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = labels(&[], &["edema"]);
        let (_, r) = render_prompt(&find(Task::ModalityRecognition, Form::Open), &l, &mut rng).unwrap();
        assert_eq!(r, "mri");
        let t = find(Task::ModalityRecognition, Form::Judgment);
        for _ in 0..30 {
            let (i, r) = render_prompt(&t, &l, &mut rng).unwrap();
            assert_eq!(r == "yes", i.contains("by MRI?"));
        }
    }

    #[test]
    fn missing_labels_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let empty = Labels::default();
        for t in default_templates() {
            assert!(render_prompt(&t, &empty, &mut rng).is_err(), "{}", t.pattern);
        }
    }

    #[test]
    fn templates_count_images() {
        assert_eq!(find(Task::ReportGeneration, Form::Open).images(), 2);
        assert_eq!(find(Task::Vqa, Form::Open).images(), 1);
        assert!(PromptTemplate::new(Task::Vqa, Form::Open, "no slots").is_err());
    }
}

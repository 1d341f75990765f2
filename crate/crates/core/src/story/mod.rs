//! Audience-tagged explanation stories: predictions, overlays, report text
//! and evidence assembled into one deterministic bundle.

mod html;
mod json;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::report::class_keyword;
use crate::data::scene::Laterality;
use crate::data::vocab::{Vocabulary, EOS};
use crate::error::{Error, Result};
use crate::interpret::ExplanationSet;
use crate::models::MultiTaskOutput;
use crate::scalar::{sigmoid, Scalar};

pub use html::render_html;
pub use json::{parse_story, render_json};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Audience {
    DomainExpert,
    MlPractitioner,
}

impl Audience {
    pub const ALL: [Audience; 2] = [Audience::DomainExpert, Audience::MlPractitioner];

    pub fn name(self) -> &'static str {
        match self {
            Audience::DomainExpert => "domain_expert",
            Audience::MlPractitioner => "ml_practitioner",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config("audiences", format!("unknown audience {s:?}; valid audiences are domain_expert, ml_practitioner")))
    }
}

impl std::fmt::Display for Audience {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionKind {
    Finding,
    Segmentation,
    ReportText,
    AttentionGallery,
    CamGallery,
    LimeTable,
    Metrics,
    Narrative,
}

impl SectionKind {
    /// Kinds only an ML practitioner sees.
    pub const TECHNICAL: [SectionKind; 2] = [SectionKind::Metrics, SectionKind::LimeTable];

    pub fn name(self) -> &'static str {
        match self {
            SectionKind::Finding => "finding",
            SectionKind::Segmentation => "segmentation",
            SectionKind::ReportText => "report_text",
            SectionKind::AttentionGallery => "attention_gallery",
            SectionKind::CamGallery => "cam_gallery",
            SectionKind::LimeTable => "lime_table",
            SectionKind::Metrics => "metrics",
            SectionKind::Narrative => "narrative",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GalleryImage {
    /// File name inside the story's `assets/` directory.
    pub file: String,
    pub caption: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimeRow {
    pub segment: usize,
    pub weight: f64,
}

/// One block of a story. The tag is the section kind, so a payload can only
/// ever appear under its own kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StorySection {
    Finding { class_id: usize, class_name: String, probability: f64, laterality: Laterality },
    Segmentation { overlay: String, mask_fraction: f64 },
    ReportText { text: String },
    AttentionGallery { images: Vec<GalleryImage> },
    CamGallery { images: Vec<GalleryImage> },
    LimeTable { class_id: usize, class_name: String, overlay: String, rows: Vec<LimeRow>, intercept: f64, r2: f64 },
    Metrics {
        logits: Vec<f64>,
        probabilities: Vec<f64>,
        losses: BTreeMap<String, f64>,
        teacher_agreement: BTreeMap<String, f64>,
    },
    Narrative { text: String },
}

impl StorySection {
    pub fn kind(&self) -> SectionKind {
        match self {
            StorySection::Finding { .. } => SectionKind::Finding,
            StorySection::Segmentation { .. } => SectionKind::Segmentation,
            StorySection::ReportText { .. } => SectionKind::ReportText,
            StorySection::AttentionGallery { .. } => SectionKind::AttentionGallery,
            StorySection::CamGallery { .. } => SectionKind::CamGallery,
            StorySection::LimeTable { .. } => SectionKind::LimeTable,
            StorySection::Metrics { .. } => SectionKind::Metrics,
            StorySection::Narrative { .. } => SectionKind::Narrative,
        }
    }

    /// Asset files the section shows, in display order.
    pub fn assets(&self) -> Vec<&str> {
        match self {
            StorySection::Segmentation { overlay, .. } | StorySection::LimeTable { overlay, .. } => vec![overlay.as_str()],
            StorySection::AttentionGallery { images } | StorySection::CamGallery { images } => {
                images.iter().map(|i| i.file.as_str()).collect()
            }
            _ => Vec::new(),
        }
    }
}

/// What is needed to regenerate a story bit-identically.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoryMetadata {
    pub student_checksum: String,
    pub teacher_checksums: BTreeMap<String, String>,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub threshold: f64,
}

/// Per-sample numbers only the technical audience sees.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Ground-truth loss of each head, by task name.
    pub losses: BTreeMap<String, f64>,
    /// Agreement with each teacher, by task name.
    pub teacher_agreement: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Story {
    pub sample: usize,
    pub audience: Audience,
    pub sections: Vec<StorySection>,
    pub metadata: StoryMetadata,
}

impl Story {
    pub fn kinds(&self) -> Vec<SectionKind> {
        self.sections.iter().map(StorySection::kind).collect()
    }

    pub fn count(&self, kind: SectionKind) -> usize {
        self.sections.iter().filter(|s| s.kind() == kind).count()
    }
}

/// Everything `build_story` reads.
pub struct StoryInputs<'a, T> {
    pub sample: usize,
    pub output: &'a MultiTaskOutput<T>,
    pub explanations: &'a ExplanationSet,
    pub classes: &'a [String],
    pub vocab: &'a Vocabulary,
    pub diagnostics: &'a Diagnostics,
    pub metadata: &'a StoryMetadata,
}

pub const NO_FINDINGS_NARRATIVE: &str =
    "The model reports no acute findings; none of the screened abnormalities reaches the positive threshold.";

/// Fixed six-decimal precision, so canonical JSON round-trips exactly.
pub fn round6(v: f64) -> f64 {
    let r = (v * 1e6).round() / 1e6;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// The plain-language sentence for one finding. The report cross-check is
/// whether the class keyword appears among the decoded report words.
pub fn narrative_sentence(class_name: &str, laterality: Laterality, report_words: &[String]) -> String {
    let token = class_keyword(class_name);
    let mentioned = report_words.iter().any(|w| *w == token);
    format!(
        "The model flags {} in the {} field; the highlighted region (see overlay) drove this call, and the generated report independently mentions {}: {}.",
        class_name.to_ascii_lowercase(),
        laterality.word(),
        token,
        if mentioned { "yes" } else { "no" }
    )
}

/// Classes whose sigmoid output exceeds `threshold`, ascending.
pub fn predicted_classes<T: Scalar>(class_logits: &[T], threshold: f64) -> Vec<usize> {
    class_logits.iter().enumerate().filter(|(_, &z)| sigmoid(z.as_f64()) > threshold).map(|(i, _)| i).collect()
}

/// Decoded report words, EOS and anything after it dropped.
pub fn report_words(tokens: &[usize], vocab: &Vocabulary) -> Vec<String> {
    tokens
        .iter()
        .take_while(|&&t| t != EOS)
        .map(|&t| vocab.token(t).unwrap_or("<unk>").to_string())
        .collect()
}

fn file_name(path: &str) -> String {
    std::path::Path::new(path).file_name().map_or_else(|| path.to_string(), |n| n.to_string_lossy().into_owned())
}

/// Assembles the story in a fixed order: findings, segmentation overlay,
/// report text, then the audience's evidence.
pub fn build_story<T: Scalar>(inputs: &StoryInputs<'_, T>, audience: Audience) -> Result<Story> {
    let StoryInputs { output, explanations, classes, vocab, diagnostics, metadata, .. } = *inputs;
    if output.class_logits.len() != classes.len() {
        return Err(Error::Assembly(format!("{} class logits for {} classes", output.class_logits.len(), classes.len())));
    }
    let predicted = predicted_classes(&output.class_logits, metadata.threshold);
    let needs_lime = audience == Audience::MlPractitioner;
    let missing: Vec<&str> = predicted
        .iter()
        .filter(|&&c| match explanations.class(c) {
            None => true,
            Some(e) => e.gradcam.is_none() || e.laterality.is_none() || (needs_lime && e.lime.is_none()),
        })
        .map(|&c| classes[c].as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Assembly(format!("no explanation for predicted class(es): {}", missing.join(", "))));
    }
    let words = report_words(&output.tokens, vocab);
    let mut sections = Vec::new();

    for &c in &predicted {
        let e = explanations.class(c).expect("checked above");
        sections.push(StorySection::Finding {
            class_id: c,
            class_name: classes[c].clone(),
            probability: round6(sigmoid(output.class_logits[c].as_f64())),
            laterality: e.laterality.expect("checked above"),
        });
    }
    sections.push(StorySection::Segmentation {
        overlay: file_name(&explanations.segmentation_overlay),
        mask_fraction: round6(explanations.mask_fraction),
    });
    sections.push(StorySection::ReportText { text: words.join(" ") });

    if !predicted.is_empty() {
        let mut images = Vec::new();
        for &c in &predicted {
            let e = explanations.class(c).expect("checked above");
            for (meta, method) in [(e.gradcam.as_ref(), "Grad-CAM"), (e.gradcampp.as_ref(), "Grad-CAM++")] {
                if let Some(m) = meta {
                    images.push(GalleryImage { file: file_name(&m.overlay), caption: format!("{method}: {}", classes[c]) });
                }
            }
        }
        sections.push(StorySection::CamGallery { images });
    }
    if predicted.is_empty() {
        sections.push(StorySection::Narrative { text: NO_FINDINGS_NARRATIVE.to_string() });
    }
    for &c in &predicted {
        let e = explanations.class(c).expect("checked above");
        let text = narrative_sentence(&classes[c], e.laterality.expect("checked above"), &words);
        sections.push(StorySection::Narrative { text });
    }

    if audience == Audience::MlPractitioner {
        for &c in &predicted {
            let lime = explanations.class(c).and_then(|e| e.lime.as_ref()).expect("checked above");
            let w = &lime.explanation.weights;
            let rows = crate::interpret::top_k(w, lime.explanation.config.top_k)
                .into_iter()
                .map(|s| LimeRow { segment: s, weight: round6(w[s]) })
                .collect();
            sections.push(StorySection::LimeTable {
                class_id: c,
                class_name: classes[c].clone(),
                overlay: file_name(&lime.heatmap.overlay),
                rows,
                intercept: round6(lime.explanation.intercept),
                r2: round6(lime.explanation.r2),
            });
        }
        if explanations.attention.is_empty() {
            return Err(Error::Assembly("no attention maps for the decoded report".into()));
        }
        let images = explanations
            .attention
            .iter()
            .map(|m| GalleryImage { file: file_name(&m.overlay), caption: format!("step {}: {}", m.target, m.label) })
            .collect();
        sections.push(StorySection::AttentionGallery { images });
        sections.push(StorySection::Metrics {
            logits: output.class_logits.iter().map(|z| round6(z.as_f64())).collect(),
            probabilities: output.class_logits.iter().map(|z| round6(sigmoid(z.as_f64()))).collect(),
            losses: diagnostics.losses.iter().map(|(k, v)| (k.clone(), round6(*v))).collect(),
            teacher_agreement: diagnostics.teacher_agreement.iter().map(|(k, v)| (k.clone(), round6(*v))).collect(),
        });
    }

    let metadata = StoryMetadata { threshold: round6(metadata.threshold), ..metadata.clone() };
    Ok(Story { sample: inputs.sample, audience, sections, metadata })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::interpret::{CamLayer, ClassExplanation, HeatmapMeta, LimeConfig, LimeExplanation, LimeRecord, Provenance};

    pub(crate) fn classes() -> Vec<String> {
        crate::data::dataset::DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect()
    }

    fn meta(file: &str, provenance: Provenance, target: usize, label: &str) -> HeatmapMeta {
        HeatmapMeta {
            file: format!("{file}.png"),
            overlay: format!("{file}_overlay.png"),
            provenance,
            target,
            label: label.into(),
            height: 4,
            width: 4,
            norm_min: 0.0,
            norm_max: 1.0,
        }
    }

    /// Classes 0 and 3 positive; report "left lung shows infiltration ." then
    /// "heart shows cardiomegaly .".
    pub(crate) fn fixture(logits: Vec<f64>) -> (MultiTaskOutput<f64>, ExplanationSet, Vocabulary) {
        let names = classes();
        let vocab = Vocabulary::for_classes(&names).unwrap();
        let words = ["left", "lung", "shows", "infiltration", ".", "heart", "shows", "cardiomegaly", "."];
        let mut tokens: Vec<usize> = words.iter().map(|w| vocab.id(w).unwrap()).collect();
        tokens.push(EOS);
        let step_attention = vec![vec![0.25; 4]; tokens.len()];
        let output = MultiTaskOutput {
            class_logits: logits.clone(),
            mask_logits: vec![1.0; 16],
            image_size: 4,
            tokens: tokens.clone(),
            step_attention,
            attention_grid: (2, 2),
        };
        let classes = predicted_classes(&logits, 0.5)
            .into_iter()
            .map(|c| ClassExplanation {
                class_id: c,
                class_name: names[c].clone(),
                gradcam: Some(meta(&format!("gradcam_c{c}"), Provenance::GradCam, c, &names[c])),
                gradcampp: Some(meta(&format!("gradcampp_c{c}"), Provenance::GradCamPp, c, &names[c])),
                lime: Some(LimeRecord {
                    explanation: LimeExplanation {
                        target: c,
                        weights: vec![0.5, -0.25, 0.125, 0.0],
                        intercept: 0.1,
                        r2: 0.9,
                        config: LimeConfig { top_k: 3, ..Default::default() },
                    },
                    heatmap: meta(&format!("lime_c{c}"), Provenance::Lime, c, &names[c]),
                }),
                laterality: Some(if c == 3 { Laterality::Cardiac } else { Laterality::Left }),
            })
            .collect();
        let attention = tokens
            .iter()
            .enumerate()
            .map(|(t, &id)| meta(&format!("attention_t{t:02}"), Provenance::Attention, t, vocab.token(id).unwrap()))
            .collect();
        let set = ExplanationSet {
            sample: 5,
            cam_layer: CamLayer::ClassifierHead,
            classes,
            attention,
            segmentation_overlay: "segmentation_overlay.png".into(),
            mask_fraction: 0.25,
        };
        (output, set, vocab)
    }

    pub(crate) fn story_for(logits: Vec<f64>, audience: Audience) -> Result<Story> {
        let (output, set, vocab) = fixture(logits);
        let names = classes();
        let diagnostics = Diagnostics {
            losses: [("abnormality".to_string(), 0.123_456_789)].into_iter().collect(),
            teacher_agreement: [("abnormality".to_string(), 1.0)].into_iter().collect(),
        };
        let metadata = StoryMetadata { threshold: 0.5, ..Default::default() };
        let inputs = StoryInputs {
            sample: 5,
            output: &output,
            explanations: &set,
            classes: &names,
            vocab: &vocab,
            diagnostics: &diagnostics,
            metadata: &metadata,
        };
        build_story(&inputs, audience)
    }

    #[test]
    fn golden_narrative() {
        let words: Vec<String> = ["heart", "shows", "cardiomegaly", "."].iter().map(|s| s.to_string()).collect();
        let s = narrative_sentence("cardiomegaly", Laterality::Cardiac, &words);
        assert_eq!(
            s,
            "The model flags cardiomegaly in the cardiac field; the highlighted region (see overlay) drove this call, and the generated report independently mentions cardiomegaly: yes."
        );
        assert_eq!(s, narrative_sentence("cardiomegaly", Laterality::Cardiac, &words));
        assert!(narrative_sentence("pleural effusion", Laterality::Left, &[]).ends_with("mentions effusion: no."));
    }

    #[test]
    fn section_order_and_audience_split() {
        let logits = vec![2.0, -1.0, -3.0, 1.5];
        let de = story_for(logits.clone(), Audience::DomainExpert).unwrap();
        use SectionKind::*;
        assert_eq!(de.kinds(), vec![Finding, Finding, Segmentation, ReportText, CamGallery, Narrative, Narrative]);
        assert!(de.kinds().iter().all(|k| !SectionKind::TECHNICAL.contains(k)));

        let ml = story_for(logits, Audience::MlPractitioner).unwrap();
        assert_eq!(ml.count(LimeTable), 2);
        assert_eq!(ml.count(Metrics), 1);
        assert_eq!(ml.count(AttentionGallery), 1);
        let cam = ml.sections.iter().find(|s| s.kind() == CamGallery).unwrap();
        assert!(cam.assets().len() >= 2);
        for s in &ml.sections {
            if let StorySection::Finding { class_id, .. } = s {
                assert!([0, 3].contains(class_id));
            }
        }
    }

    #[test]
    fn no_findings_story() {
        let story = story_for(vec![-2.0; 4], Audience::DomainExpert).unwrap();
        assert_eq!(story.count(SectionKind::CamGallery), 0);
        assert_eq!(story.count(SectionKind::Finding), 0);
        assert!(story
            .sections
            .iter()
            .any(|s| matches!(s, StorySection::Narrative { text } if text.contains("no acute findings"))));
    }

    #[test]
    fn missing_explanation_names_the_class() {
        let (output, mut set, vocab) = fixture(vec![2.0, -1.0, -3.0, 1.5]);
        set.classes.retain(|c| c.class_id != 3);
        let names = classes();
        let metadata = StoryMetadata { threshold: 0.5, ..Default::default() };
        let inputs = StoryInputs {
            sample: 5,
            output: &output,
            explanations: &set,
            classes: &names,
            vocab: &vocab,
            diagnostics: &Diagnostics::default(),
            metadata: &metadata,
        };
        let err = build_story(&inputs, Audience::DomainExpert).unwrap_err();
        assert!(matches!(&err, Error::Assembly(m) if m.contains("cardiomegaly")), "{err}");
    }

    #[test]
    fn audience_names() {
        for a in Audience::ALL {
            assert_eq!(Audience::parse(a.name()).unwrap(), a);
        }
        assert!(matches!(Audience::parse("patient"), Err(Error::Config { .. })));
    }
}

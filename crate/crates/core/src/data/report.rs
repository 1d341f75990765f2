//! Template-grammar radiology reports.

use super::scene::{Laterality, SceneSpec};
use super::vocab::{Vocabulary, BOS, EOS};
use crate::error::{Error, Result};

/// Words of the sentence reporting one finding.
pub fn finding_words(class_name: &str, laterality: Laterality) -> Vec<String> {
    let mut words: Vec<String> = match laterality {
        Laterality::Cardiac => vec!["heart".into()],
        lat => vec![lat.word().into(), "lung".into()],
    };
    words.push("shows".into());
    words.extend(class_name.split_whitespace().map(str::to_ascii_lowercase));
    words.push(".".into());
    words
}

pub const NO_FINDINGS: [&str; 4] = ["no", "acute", "findings", "."];

/// Report words for `scene`, one sentence per finding in class-id order.
pub fn report_words(scene: &SceneSpec, classes: &[String]) -> Result<Vec<String>> {
    let mut findings: Vec<_> = scene.abnormalities.iter().collect();
    findings.sort_by_key(|a| a.class_id);
    if findings.is_empty() {
        return Ok(NO_FINDINGS.iter().map(|s| s.to_string()).collect());
    }
    let mut words = Vec::new();
    for a in findings {
        let name = classes
            .get(a.class_id)
            .ok_or_else(|| Error::Vocabulary(format!("no grammar entry for class {}", a.class_id)))?;
        words.extend(finding_words(name, a.laterality));
    }
    Ok(words)
}

/// Longest report the grammar can produce for `classes`, BOS and EOS included.
pub fn max_report_tokens(classes: &[String]) -> usize {
    let findings: usize = classes
        .iter()
        .map(|c| finding_words(c, Laterality::Bilateral).len())
        .sum();
    2 + findings.max(NO_FINDINGS.len())
}

/// BOS-prefixed, EOS-terminated token ids.
pub fn make_report(scene: &SceneSpec, classes: &[String], vocab: &Vocabulary, max_len: usize) -> Result<Vec<usize>> {
    let words = report_words(scene, classes)?;
    let mut ids = Vec::with_capacity(words.len() + 2);
    ids.push(BOS);
    for w in &words {
        ids.push(vocab.require(w)?);
    }
    ids.push(EOS);
    if ids.len() > max_len {
        return Err(Error::Contract(format!("report of {} tokens exceeds max_report_len {max_len}", ids.len())));
    }
    Ok(ids)
}

/// The word in a class name the report cross-check looks for (its last word).
pub fn class_keyword(class_name: &str) -> String {
    class_name
        .split_whitespace()
        .last()
        .unwrap_or(class_name)
        .to_ascii_lowercase()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::scene::{AbnormalitySpec, Ellipse, Region, Structure};

    fn classes() -> Vec<String> {
        ["infiltration", "consolidation", "pleural effusion", "cardiomegaly"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    fn scene(findings: &[(usize, Laterality)]) -> SceneSpec {
        let e = Ellipse { cx: 0.3, cy: 0.4, rx: 0.05, ry: 0.05 };
        SceneSpec {
            left_lung: Structure { ellipse: Ellipse { cx: 0.29, cy: 0.47, rx: 0.14, ry: 0.3 }, intensity: -0.3 },
            right_lung: Structure { ellipse: Ellipse { cx: 0.71, cy: 0.47, rx: 0.14, ry: 0.3 }, intensity: -0.3 },
            heart: Structure { ellipse: Ellipse { cx: 0.5, cy: 0.62, rx: 0.15, ry: 0.13 }, intensity: 0.25 },
            abnormalities: findings
                .iter()
                .map(|&(class_id, laterality)| AbnormalitySpec {
                    class_id,
                    region: Region::Ellipse(e),
                    intensity_delta: 0.2,
                    laterality,
                })
                .collect(),
            noise_sigma: 0.0,
            rng_seed: 0,
        }
    }

    fn text(findings: &[(usize, Laterality)]) -> String {
        let v = Vocabulary::for_classes(&classes()).unwrap();
        let ids = make_report(&scene(findings), &classes(), &v, 32).unwrap();
        assert_eq!(ids[0], BOS);
        assert_eq!(*ids.last().unwrap(), EOS);
        v.decode(&ids)
    }

    #[test]
    fn empty_and_single_finding_templates() {
        assert_eq!(text(&[]), "no acute findings .");
        assert_eq!(text(&[(1, Laterality::Left)]), "left lung shows consolidation .");
    }

    /// Every unordered pair of findings over the default classes, with every
    /// laterality each class can take, frozen as golden strings.
    #[test]
    fn two_finding_golden_reports() {
        use Laterality::*;
        let golden: &[(&[(usize, Laterality)], &str)] = &[
            (&[(3, Cardiac), (2, Right)], "right lung shows pleural effusion . heart shows cardiomegaly ."),
            (&[(0, Bilateral), (1, Right)], "bilateral lung shows infiltration . right lung shows consolidation ."),
            (&[(0, Left), (2, Left)], "left lung shows infiltration . left lung shows pleural effusion ."),
            (&[(0, Right), (3, Cardiac)], "right lung shows infiltration . heart shows cardiomegaly ."),
            (&[(1, Left), (2, Right)], "left lung shows consolidation . right lung shows pleural effusion ."),
            (&[(1, Right), (3, Cardiac)], "right lung shows consolidation . heart shows cardiomegaly ."),
            (&[(2, Left), (3, Cardiac)], "left lung shows pleural effusion . heart shows cardiomegaly ."),
        ];
        for (findings, want) in golden {
            assert_eq!(text(findings), *want);
        }
    }

    #[test]
    fn longest_default_report_fits_and_overflow_is_rejected() {
        assert_eq!(max_report_tokens(&classes()), 2 + 5 + 5 + 6 + 5);
        let v = Vocabulary::for_classes(&classes()).unwrap();
        let s = scene(&[(0, Laterality::Left), (1, Laterality::Left)]);
        assert!(matches!(make_report(&s, &classes(), &v, 8), Err(Error::Contract(_))));
    }

    #[test]
    fn missing_token_is_a_vocabulary_error() {
        let v = Vocabulary::for_classes(&classes()[..2]).unwrap();
        let s = scene(&[(3, Laterality::Cardiac)]);
        assert!(matches!(make_report(&s, &classes(), &v, 32), Err(Error::Vocabulary(_))));
    }
}

//! The per-sample index of persisted explanation artifacts.

use serde::{Deserialize, Serialize};

use super::cam::CamLayer;
use super::lime::LimeExplanation;
use super::render::HeatmapMeta;
use super::Heatmap;
use crate::data::scene::{ClassStyle, Laterality};

/// A LIME fit together with the heatmap painted from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimeRecord {
    pub explanation: LimeExplanation,
    pub heatmap: HeatmapMeta,
}

/// Everything computed for one class of one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassExplanation {
    pub class_id: usize,
    pub class_name: String,
    pub gradcam: Option<HeatmapMeta>,
    pub gradcampp: Option<HeatmapMeta>,
    pub lime: Option<LimeRecord>,
    /// Field the class-activation mass points to, when a CAM was computed.
    pub laterality: Option<Laterality>,
}

/// `explanations.json`: file names are relative to the sample's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationSet {
    pub sample: usize,
    pub cam_layer: CamLayer,
    /// Predicted-positive classes, ascending.
    pub classes: Vec<ClassExplanation>,
    /// One map per decoded token, labelled with the token.
    pub attention: Vec<HeatmapMeta>,
    /// Predicted lung mask over the input image.
    pub segmentation_overlay: String,
    /// Fraction of pixels in the predicted mask.
    pub mask_fraction: f64,
}

impl ExplanationSet {
    pub fn class(&self, class_id: usize) -> Option<&ClassExplanation> {
        self.classes.iter().find(|c| c.class_id == class_id)
    }
}

/// Reads a field from a class heatmap: cardiomegaly is always cardiac;
/// otherwise the share of map mass in the left image half decides between
/// left (≥ 2/3), right (≤ 1/3) and bilateral.
pub fn cam_laterality(heatmap: &Heatmap, class_name: &str, class_id: usize) -> Laterality {
    if ClassStyle::for_class(class_name, class_id) == ClassStyle::Cardiomegaly {
        return Laterality::Cardiac;
    }
    let (mut left, mut right) = (0.0, 0.0);
    for (i, &v) in heatmap.values.iter().enumerate() {
        let x = i % heatmap.width;
        if 2 * x + 1 < heatmap.width {
            left += v;
        } else if 2 * x + 1 > heatmap.width {
            right += v;
        }
    }
    let total = left + right;
    if total <= 0.0 {
        return Laterality::Bilateral;
    }
    let share = left / total;
    if share >= 2.0 / 3.0 {
        Laterality::Left
    } else if share <= 1.0 / 3.0 {
        Laterality::Right
    } else {
        Laterality::Bilateral
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interpret::Provenance;

    fn map(values: Vec<f64>) -> Heatmap {
        Heatmap::from_raw(1, 4, values, Provenance::GradCam, 0).unwrap()
    }

    #[test]
    fn laterality_from_mass() {
        assert_eq!(cam_laterality(&map(vec![1.0, 1.0, 0.0, 0.1]), "infiltration", 0), Laterality::Left);
        assert_eq!(cam_laterality(&map(vec![0.0, 0.0, 0.0, 1.0]), "infiltration", 0), Laterality::Right);
        assert_eq!(cam_laterality(&map(vec![1.0, 0.0, 0.0, 1.0]), "consolidation", 1), Laterality::Bilateral);
        assert_eq!(cam_laterality(&map(vec![0.0; 4]), "consolidation", 1), Laterality::Bilateral);
        assert_eq!(cam_laterality(&map(vec![1.0, 0.0, 0.0, 0.0]), "cardiomegaly", 3), Laterality::Cardiac);
    }
}

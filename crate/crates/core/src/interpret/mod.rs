//! Explanations of the student: Grad-CAM, Grad-CAM++, decoder attention maps
//! and LIME over grid segments, plus the PNG/JSON artifacts they persist as.

pub mod attention_maps;
pub mod bundle;
pub mod cam;
pub mod lime;
pub mod render;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use attention_maps::attention_heatmaps;
pub use bundle::{cam_laterality, ClassExplanation, ExplanationSet, LimeRecord};
pub use cam::{grad_cam, grad_cam_map, grad_cam_pp, grad_cam_pp_map, near_region, CamLayer};
pub use lime::{
    lime_explain, lime_heatmap, masked_image, perturb_samples, segment_grid, top_k, LimeConfig, LimeExplanation, Perturbations,
    SegmentMap,
};
pub use render::{mask_overlay, overlay, write_heatmap_png, write_overlay_png, Colormap, HeatmapMeta};

/// Which explainer produced a heatmap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    GradCam,
    GradCamPp,
    Attention,
    Lime,
}

impl Provenance {
    pub const ALL: [Provenance; 4] = [Provenance::GradCam, Provenance::GradCamPp, Provenance::Lime, Provenance::Attention];

    pub fn name(self) -> &'static str {
        match self {
            Provenance::GradCam => "gradcam",
            Provenance::GradCamPp => "gradcampp",
            Provenance::Attention => "attention",
            Provenance::Lime => "lime",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            Error::config("methods", format!("unknown method {s:?}; valid methods are gradcam, gradcampp, lime, attention"))
        })
    }
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A display-ready map over the image. `values` are in `[0, 1]` with max 1
/// unless the map is all zero; `raw_min`/`raw_max` keep the range the values
/// were scaled from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub provenance: Provenance,
    /// Class id for gradcam/gradcampp/lime, token position for attention.
    pub target: usize,
    pub raw_min: f64,
    pub raw_max: f64,
}

impl Heatmap {
    /// Scales a non-negative raw map so that its maximum becomes 1. Negative
    /// entries are clipped first.
    pub fn from_raw(height: usize, width: usize, raw: Vec<f64>, provenance: Provenance, target: usize) -> Result<Self> {
        if raw.len() != height * width {
            return Err(Error::Shape(format!("{height}×{width} heatmap needs {} values, got {}", height * width, raw.len())));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Explanation(format!("{provenance} map has non-finite values")));
        }
        let raw_min = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let raw_max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let values = if raw_max > 0.0 { raw.iter().map(|&v| v.max(0.0) / raw_max).collect() } else { vec![0.0; raw.len()] };
        Ok(Self { height, width, values, provenance, target, raw_min, raw_max })
    }

    /// Row-major position of the largest value (first on ties).
    pub fn argmax(&self) -> (usize, usize) {
        let i = crate::tensor::argmax(&self.values);
        (i / self.width, i % self.width)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_normalisation() {
        let h = Heatmap::from_raw(1, 3, vec![0.0, 2.0, -1.0], Provenance::Lime, 0).unwrap();
        assert_eq!(h.values, vec![0.0, 1.0, 0.0]);
        assert_eq!((h.raw_min, h.raw_max), (-1.0, 2.0));
        assert_eq!(h.argmax(), (0, 1));
        assert!(Heatmap::from_raw(1, 2, vec![0.0, 0.0], Provenance::GradCam, 0).unwrap().is_zero());
        assert!(matches!(Heatmap::from_raw(2, 2, vec![0.0], Provenance::GradCam, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn method_names_round_trip() {
        for p in Provenance::ALL {
            assert_eq!(Provenance::parse(p.name()).unwrap(), p);
        }
        let err = Provenance::parse("shap").unwrap_err();
        assert!(err.to_string().contains("gradcampp"));
    }
}

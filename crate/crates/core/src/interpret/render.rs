use std::path::Path;

use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use super::{Heatmap, Provenance};
use crate::data::io::write_png_gray;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Colormap {
    #[default]
    Jet,
    Hot,
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

impl Colormap {
    /// RGB in `[0, 1]` for `v ∈ [0, 1]`.
    pub fn color(self, v: f64) -> [f64; 3] {
        let v = clamp01(v);
        match self {
            Colormap::Jet => [
                clamp01(1.5 - (4.0 * v - 3.0).abs()),
                clamp01(1.5 - (4.0 * v - 2.0).abs()),
                clamp01(1.5 - (4.0 * v - 1.0).abs()),
            ],
            Colormap::Hot => [clamp01(3.0 * v), clamp01(3.0 * v - 1.0), clamp01(3.0 * v - 2.0)],
        }
    }
}

fn to_u8(v: f64) -> u8 {
    (clamp01(v) * 255.0).round() as u8
}

/// Alpha-blends the colormapped heatmap over a grayscale image in `[0, 1]`;
/// pixel weight is `blend · h`, so a zero map leaves the image untouched.
/// Returns packed RGB bytes.
pub fn overlay<T: Scalar>(gray: &[T], heatmap: &Heatmap, colormap: Colormap, blend: f64) -> Result<Vec<u8>> {
    if gray.len() != heatmap.values.len() {
        return Err(Error::Shape(format!("image has {} pixels, heatmap {}", gray.len(), heatmap.values.len())));
    }
    let mut out = Vec::with_capacity(gray.len() * 3);
    for (&g, &h) in gray.iter().zip(&heatmap.values) {
        let g = clamp01(g.as_f64());
        let a = clamp01(blend) * clamp01(h);
        let c = colormap.color(h);
        for ch in c {
            out.push(to_u8((1.0 - a) * g + a * ch));
        }
    }
    Ok(out)
}

/// Tints the pixels of a binary mask green over a grayscale image.
pub fn mask_overlay<T: Scalar>(gray: &[T], mask: &[bool], blend: f64) -> Result<Vec<u8>> {
    if gray.len() != mask.len() {
        return Err(Error::Shape(format!("image has {} pixels, mask {}", gray.len(), mask.len())));
    }
    let a = clamp01(blend);
    let mut out = Vec::with_capacity(gray.len() * 3);
    for (&g, &m) in gray.iter().zip(mask) {
        let g = clamp01(g.as_f64());
        for ch in [0.0, 1.0, 0.0] {
            out.push(to_u8(if m { (1.0 - a) * g + a * ch } else { g }));
        }
    }
    Ok(out)
}

pub fn write_overlay_png(path: &Path, width: usize, height: usize, rgb: Vec<u8>) -> Result<()> {
    let img = RgbImage::from_raw(width as u32, height as u32, rgb)
        .ok_or_else(|| Error::Shape("rgb buffer does not match dimensions".into()))?;
    img.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

/// The display-normalised map as an 8-bit grayscale PNG.
pub fn write_heatmap_png(path: &Path, heatmap: &Heatmap) -> Result<()> {
    write_png_gray(path, heatmap.width, heatmap.height, heatmap.values.iter().map(|&v| to_u8(v)).collect())
}

/// One entry of `heatmap_meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapMeta {
    pub file: String,
    pub overlay: String,
    pub provenance: Provenance,
    pub target: usize,
    /// Class name or decoded token the map explains.
    pub label: String,
    pub height: usize,
    pub width: usize,
    pub norm_min: f64,
    pub norm_max: f64,
}

impl HeatmapMeta {
    pub fn new(heatmap: &Heatmap, file: String, overlay: String, label: String) -> Self {
        Self {
            file,
            overlay,
            provenance: heatmap.provenance,
            target: heatmap.target,
            label,
            height: heatmap.height,
            width: heatmap.width,
            norm_min: heatmap.raw_min,
            norm_max: heatmap.raw_max,
        }
    }
}

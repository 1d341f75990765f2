//! Grayscale images and the preprocessing chain: pad to square, normalize to
//! `[0, 1]`, resize.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::bilinear_plane;

#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    height: usize,
    width: usize,
    pixels: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(height: usize, width: usize, pixels: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("image must be non-empty, got {height}×{width}")));
        }
        if pixels.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}×{width} image needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self { height, width, pixels: vec![value; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn is_square(&self) -> bool {
        self.height == self.width
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [T] {
        &mut self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> T {
        self.pixels[y * self.width + x]
    }

    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image {
            height: self.height,
            width: self.width,
            pixels: self.pixels.iter().map(|&p| U::lit(p.as_f64())).collect(),
        }
    }

    /// 8-bit quantization, `round(255 · clamp(v, 0, 1))`.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&p| (p.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}

/// Pads to `max(H,W)` on both sides, centring the content. Odd remainders put
/// the extra row or column at the bottom or right.
pub fn pad_to_square<T: Scalar>(image: &Image<T>, fill: T) -> Image<T> {
    let side = image.height.max(image.width);
    if image.is_square() {
        return image.clone();
    }
    let top = (side - image.height) / 2;
    let left = (side - image.width) / 2;
    let mut out = vec![fill; side * side];
    for y in 0..image.height {
        let dst = (top + y) * side + left;
        out[dst..dst + image.width].copy_from_slice(&image.pixels[y * image.width..(y + 1) * image.width]);
    }
    Image { height: side, width: side, pixels: out }
}

/// Maps `v ↦ v / source_max`.
pub fn normalize<T: Scalar>(image: &Image<T>, source_max: T) -> Result<Image<T>> {
    if !(source_max > T::zero()) {
        return Err(Error::Domain(format!("source_max must be positive, got {source_max}")));
    }
    if let Some(bad) = image.pixels.iter().find(|&&p| p < T::zero() || p.is_nan()) {
        return Err(Error::Domain(format!("pixel value {bad} is outside [0, source_max]")));
    }
    let pixels = image
        .pixels
        .iter()
        .map(|&p| (p / source_max).min(T::one()))
        .collect();
    Ok(Image { height: image.height, width: image.width, pixels })
}

/// Bilinear resize of a square image to `target × target`, sampling at pixel
/// centres.
pub fn resize<T: Scalar>(image: &Image<T>, target: usize) -> Result<Image<T>> {
    if !image.is_square() {
        return Err(Error::Contract(format!(
            "resize expects a square image (pad first), got {}×{}",
            image.height, image.width
        )));
    }
    if target == 0 {
        return Err(Error::Domain("resize target must be positive".into()));
    }
    if target == image.height {
        return Ok(image.clone());
    }
    let pixels = bilinear_plane(&image.pixels, image.height, image.width, target, target);
    Ok(Image { height: target, width: target, pixels })
}

/// `pad_to_square → normalize → resize`
pub fn preprocess<T: Scalar>(image: &Image<T>, source_max: T, target: usize) -> Result<Image<T>> {
    let padded = pad_to_square(image, T::zero());
    let normalized = normalize(&padded, source_max)?;
    resize(&normalized, target)
}

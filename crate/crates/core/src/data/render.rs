use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::image::Image;
use super::scene::{Region, SceneSpec, BACKGROUND};
use crate::error::Result;

/// Relative coordinates of the centre of pixel `(y, x)`.
#[inline]
pub fn pixel_centre(y: usize, x: usize, size: usize) -> (f64, f64) {
    ((x as f64 + 0.5) / size as f64, (y as f64 + 0.5) / size as f64)
}

/// Side length, in pixels, of one cell of the haze checker pattern.
pub fn haze_cell(size: usize) -> usize {
    (size / 32).max(1)
}

/// Whether pixel `(y, x)` receives the intensity of `region`.
pub fn region_covers(region: &Region, y: usize, x: usize, size: usize) -> bool {
    let (u, v) = pixel_centre(y, x, size);
    match region {
        Region::Ellipse(e) => e.contains(u, v),
        Region::Haze(e) => {
            let cell = haze_cell(size);
            e.contains(u, v) && (x / cell + y / cell) % 2 == 0
        }
    }
}

/// Noise-free additive composition before clipping.
pub fn render_template(scene: &SceneSpec, size: usize) -> Vec<f64> {
    let mut out = vec![BACKGROUND; size * size];
    for y in 0..size {
        for x in 0..size {
            let (u, v) = pixel_centre(y, x, size);
            let p = &mut out[y * size + x];
            for s in [&scene.left_lung, &scene.right_lung, &scene.heart] {
                if s.ellipse.contains(u, v) {
                    *p += s.intensity;
                }
            }
            for a in &scene.abnormalities {
                if region_covers(&a.region, y, x, size) {
                    *p += a.intensity_delta;
                }
            }
        }
    }
    out
}

/// Background + lungs + heart + abnormalities + Gaussian noise, clipped to
/// `[0, 1]`. Noise is drawn from `scene.rng_seed` only, so geometry and noise
/// vary independently.
pub fn render_image(scene: &SceneSpec, size: usize) -> Result<Image<f64>> {
    scene.validate(usize::MAX)?;
    let mut pixels = render_template(scene, size);
    if scene.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(scene.rng_seed);
        let normal = Normal::new(0.0, scene.noise_sigma).expect("valid sigma");
        for p in &mut pixels {
            *p += normal.sample(&mut rng);
        }
    }
    for p in &mut pixels {
        *p = p.clamp(0.0, 1.0);
    }
    Image::new(size, size, pixels)
}

/// Binary union of both lung ellipses, row-major.
pub fn rasterize_mask(scene: &SceneSpec, size: usize) -> Vec<u8> {
    (0..size * size)
        .map(|i| {
            let (u, v) = pixel_centre(i / size, i % size, size);
            u8::from(scene.in_lungs(u, v))
        })
        .collect()
}

//! LIME over a regular grid of image segments: random segment masks, a
//! cosine-distance locality kernel and a weighted ridge surrogate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Heatmap, Provenance};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Segment id of every pixel, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentMap {
    pub height: usize,
    pub width: usize,
    pub n_segments: usize,
    pub ids: Vec<usize>,
}

/// Splits `len` into `n` runs, the first `len % n` one longer.
fn runs(len: usize, n: usize) -> Vec<usize> {
    (0..n).map(|i| len / n + usize::from(i < len % n)).collect()
}

/// `n×n` near-equal rectangles with row-major ids.
pub fn segment_grid(height: usize, width: usize, n: usize) -> Result<SegmentMap> {
    if n < 2 || n > height.min(width) {
        return Err(Error::Domain(format!("grid size {n} must lie in [2, {}]", height.min(width))));
    }
    let row_of: Vec<usize> = runs(height, n).iter().enumerate().flat_map(|(i, &r)| std::iter::repeat(i).take(r)).collect();
    let col_of: Vec<usize> = runs(width, n).iter().enumerate().flat_map(|(i, &r)| std::iter::repeat(i).take(r)).collect();
    let mut ids = Vec::with_capacity(height * width);
    for &r in &row_of {
        for &c in &col_of {
            ids.push(r * n + c);
        }
    }
    Ok(SegmentMap { height, width, n_segments: n * n, ids })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimeConfig {
    pub n_samples: usize,
    /// Kernel width σ; `None` means `0.25·√S`.
    pub kernel_width: Option<f64>,
    pub ridge: f64,
    pub top_k: usize,
    pub fill_value: f64,
    /// Segments per side of the grid.
    pub grid: usize,
    pub seed: u64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        Self { n_samples: 500, kernel_width: None, ridge: 1e-3, top_k: 5, fill_value: 0.0, grid: 8, seed: 17 }
    }
}

impl LimeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::config("lime.n_samples", "must be positive"));
        }
        if let Some(s) = self.kernel_width {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::config("lime.kernel_width", format!("must be positive, got {s}")));
            }
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::config("lime.ridge", format!("must be non-negative, got {}", self.ridge)));
        }
        if self.top_k == 0 {
            return Err(Error::config("lime.top_k", "must be positive"));
        }
        if !self.fill_value.is_finite() {
            return Err(Error::config("lime.fill_value", "must be finite"));
        }
        if self.grid < 2 {
            return Err(Error::config("lime.grid", "must be at least 2"));
        }
        Ok(())
    }

    pub fn sigma(&self, n_segments: usize) -> f64 {
        self.kernel_width.unwrap_or(0.25 * (n_segments as f64).sqrt())
    }
}

/// Binary design matrix, one row per perturbation; row 0 keeps every segment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Perturbations {
    pub rows: Vec<Vec<u8>>,
}

fn design(n_samples: usize, n_segments: usize, seed: u64) -> Perturbations {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n_samples);
    rows.push(vec![1u8; n_segments]);
    for _ in 1..n_samples {
        rows.push((0..n_segments).map(|_| u8::from(rng.gen::<bool>())).collect());
    }
    Perturbations { rows }
}

/// The image with every segment whose bit is 0 replaced by `fill`.
pub fn masked_image<T: Scalar>(image: &[T], segments: &SegmentMap, row: &[u8], fill: T) -> Result<Vec<T>> {
    if image.len() != segments.ids.len() || row.len() != segments.n_segments {
        return Err(Error::Shape(format!(
            "image of {} pixels / row of {} bits against a {}-pixel map with {} segments",
            image.len(),
            row.len(),
            segments.ids.len(),
            segments.n_segments
        )));
    }
    Ok(image.iter().zip(&segments.ids).map(|(&p, &s)| if row[s] == 1 { p } else { fill }).collect())
}

/// Design matrix and the masked images it describes.
pub fn perturb_samples<T: Scalar>(image: &[T], segments: &SegmentMap, config: &LimeConfig) -> Result<(Perturbations, Vec<Vec<T>>)> {
    config.validate()?;
    let p = design(config.n_samples, segments.n_segments, config.seed);
    let fill = T::lit(config.fill_value);
    let images = p.rows.iter().map(|r| masked_image(image, segments, r, fill)).collect::<Result<_>>()?;
    Ok((p, images))
}

/// Cosine distance of a binary row to the all-ones row; an empty row is at
/// distance 1.
fn cosine_distance(row: &[u8]) -> f64 {
    let on = row.iter().filter(|&&b| b == 1).count();
    if on == 0 {
        1.0
    } else {
        1.0 - (on as f64 / row.len() as f64).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimeExplanation {
    pub target: usize,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub r2: f64,
    pub config: LimeConfig,
}

/// Solves the symmetric positive definite system `a·x = b` in place by
/// Cholesky factorisation.
fn cholesky_solve(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Option<Vec<f64>> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 1e-12) {
            return None;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k * n + i] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    Some(b)
}

/// Weighted ridge fit `min Σ π_i (y_i − w·z_i − b)² + λ‖w‖²` (intercept not
/// penalised). Returns `(w, b, weighted R²)`.
pub fn weighted_ridge(rows: &[Vec<u8>], y: &[f64], pi: &[f64], lambda: f64) -> Result<(Vec<f64>, f64, f64)> {
    let s = rows.first().map_or(0, Vec::len);
    if rows.iter().all(|r| r == &rows[0]) {
        return Err(Error::Explanation("degenerate design: every perturbation row is identical".into()));
    }
    let n = s + 1;
    let mut ata = vec![0.0; n * n];
    let mut atb = vec![0.0; n];
    let mut x = vec![0.0; n];
    for ((row, &yi), &wi) in rows.iter().zip(y).zip(pi) {
        for (xj, &b) in x.iter_mut().zip(row) {
            *xj = f64::from(b);
        }
        x[s] = 1.0;
        for i in 0..n {
            if x[i] == 0.0 {
                continue;
            }
            atb[i] += wi * x[i] * yi;
            for j in 0..n {
                ata[i * n + j] += wi * x[i] * x[j];
            }
        }
    }
    for i in 0..s {
        ata[i * n + i] += lambda;
    }
    let theta = cholesky_solve(ata, atb, n)
        .ok_or_else(|| Error::Explanation("weighted design is singular; raise the ridge strength".into()))?;
    let (w, b) = (theta[..s].to_vec(), theta[s]);
    let total: f64 = pi.iter().sum();
    let mean = pi.iter().zip(y).map(|(p, v)| p * v).sum::<f64>() / total;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for ((row, &yi), &wi) in rows.iter().zip(y).zip(pi) {
        let pred = b + row.iter().zip(&w).map(|(&z, w)| f64::from(z) * w).sum::<f64>();
        ss_res += wi * (yi - pred) * (yi - pred);
        ss_tot += wi * (yi - mean) * (yi - mean);
    }
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok((w, b, r2))
}

/// Fits the local surrogate of `predict` around `image`. The model is only
/// reached through `predict`, evaluated once per perturbation row.
pub fn lime_explain<T, F>(predict: F, image: &[T], target: usize, segments: &SegmentMap, config: &LimeConfig) -> Result<LimeExplanation>
where
    T: Scalar,
    F: Fn(&[T]) -> Result<f64> + Sync,
{
    config.validate()?;
    if image.len() != segments.ids.len() {
        return Err(Error::Shape(format!("image has {} pixels, segment map {}", image.len(), segments.ids.len())));
    }
    let p = design(config.n_samples, segments.n_segments, config.seed);
    let fill = T::lit(config.fill_value);
    let y: Vec<f64> = p
        .rows
        .par_iter()
        .map(|r| {
            let v = predict(&masked_image(image, segments, r, fill)?)?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Explanation("predict_fn returned a non-finite score".into()))
            }
        })
        .collect::<Result<_>>()?;
    let sigma = config.sigma(segments.n_segments);
    let pi: Vec<f64> = p.rows.iter().map(|r| (-cosine_distance(r).powi(2) / (sigma * sigma)).exp()).collect();
    let (weights, intercept, r2) = weighted_ridge(&p.rows, &y, &pi, config.ridge)?;
    Ok(LimeExplanation { target, weights, intercept, r2, config: config.clone() })
}

/// Kernel weights of a design, exposed so oracles can rebuild the fit.
pub fn kernel_weights(rows: &[Vec<u8>], sigma: f64) -> Vec<f64> {
    rows.iter().map(|r| (-cosine_distance(r).powi(2) / (sigma * sigma)).exp()).collect()
}

/// The seeded design matrix `lime_explain` uses for `config`.
pub fn design_matrix(n_segments: usize, config: &LimeConfig) -> Perturbations {
    design(config.n_samples, n_segments, config.seed)
}

/// Indices of the `k` largest `|w|`, ties broken by index.
pub fn top_k(weights: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..weights.len()).collect();
    idx.sort_by(|&a, &b| weights[b].abs().total_cmp(&weights[a].abs()).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Paints the positive weights among the top `k` onto their segments.
pub fn lime_heatmap(expl: &LimeExplanation, segments: &SegmentMap) -> Result<Heatmap> {
    if expl.weights.len() != segments.n_segments {
        return Err(Error::Shape(format!("{} weights for {} segments", expl.weights.len(), segments.n_segments)));
    }
    let keep = top_k(&expl.weights, expl.config.top_k);
    let mut per = vec![0.0; segments.n_segments];
    for i in keep {
        per[i] = expl.weights[i].max(0.0);
    }
    let raw = segments.ids.iter().map(|&s| per[s]).collect();
    Heatmap::from_raw(segments.height, segments.width, raw, Provenance::Lime, expl.target)
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::image::Image;
use super::render::{rasterize_mask, render_image};
use super::report::{make_report, max_report_tokens};
use super::scene::{sample_abnormality, sample_anatomy, ClassStyle, SceneSpec, MAX_NOISE_SIGMA};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};

pub const DEFAULT_CLASSES: [&str; 4] = ["infiltration", "consolidation", "pleural effusion", "cardiomegaly"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_samples: usize,
    pub image_size: usize,
    pub classes: Vec<String>,
    pub class_prevalence: Vec<f64>,
    pub max_report_len: usize,
    pub split_ratios: [f64; 3],
    pub master_seed: u64,
    pub noise_sigma: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_samples: 600,
            image_size: 64,
            classes: DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect(),
            class_prevalence: vec![0.3; 4],
            max_report_len: 32,
            split_ratios: [0.8, 0.1, 0.1],
            master_seed: 20240417,
            noise_sigma: 0.03,
        }
    }
}

impl DatasetConfig {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::config("n_samples", "must be positive"));
        }
        if self.image_size < 16 {
            return Err(Error::config("image_size", "must be at least 16 pixels"));
        }
        if self.classes.is_empty() || self.classes.len() > 14 {
            return Err(Error::config("classes", "between 1 and 14 class names required"));
        }
        if self.class_prevalence.len() != self.classes.len() {
            return Err(Error::config(
                "class_prevalence",
                format!("{} values for {} classes", self.class_prevalence.len(), self.classes.len()),
            ));
        }
        if let Some(p) = self.class_prevalence.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return Err(Error::config("class_prevalence", format!("{p} outside [0, 1)")));
        }
        if self.split_ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::config("split_ratios", "each ratio must lie in [0, 1]"));
        }
        if (self.split_ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config("split_ratios", "ratios must sum to 1"));
        }
        if !(0.0..=MAX_NOISE_SIGMA).contains(&self.noise_sigma) {
            return Err(Error::config("noise_sigma", format!("must lie in [0, {MAX_NOISE_SIGMA}]")));
        }
        let needed = max_report_tokens(&self.classes);
        if self.max_report_len < needed {
            return Err(Error::config(
                "max_report_len",
                format!("the report grammar needs up to {needed} tokens for these classes"),
            ));
        }
        Vocabulary::for_classes(&self.classes).map_err(|e| Error::config("classes", e.to_string()))?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub index: usize,
    pub image: Image<f64>,
    pub labels: Vec<u8>,
    pub mask: Vec<u8>,
    pub report: Vec<usize>,
    pub scene: SceneSpec,
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sample `index`: `mix64(master_seed ^ mix64(index))`.
pub fn sample_seed(master_seed: u64, index: usize) -> u64 {
    mix64(master_seed ^ mix64(index as u64))
}

const WEYL_PRIMES: [f64; 14] = [2., 3., 5., 7., 11., 13., 17., 19., 23., 29., 31., 37., 41., 43.];

/// Whether class `class` is present in sample `index`.
///
/// Membership follows the Weyl sequence `frac(offset_c + index·√p_c)` with a
/// distinct prime per class, thresholded at the prevalence. The sequence is
/// equidistributed, so per-class counts over any prefix of samples stay within
/// a few samples of `prevalence · n`, and the decision for sample `index`
/// depends only on `(master_seed, index)`.
pub fn class_present(master_seed: u64, class: usize, index: usize, prevalence: f64) -> bool {
    let offset = (mix64(master_seed ^ mix64(0xC1A5_5000 + class as u64)) >> 11) as f64 / (1u64 << 53) as f64;
    let step = WEYL_PRIMES[class % WEYL_PRIMES.len()].sqrt();
    let u = (offset + index as f64 * step).fract();
    u < prevalence
}

pub fn generate_scene(config: &DatasetConfig, index: usize) -> SceneSpec {
    let seed = sample_seed(config.master_seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (left, right, heart) = sample_anatomy(&mut rng);
    let mut abnormalities = Vec::new();
    for (class_id, name) in config.classes.iter().enumerate() {
        if class_present(config.master_seed, class_id, index, config.class_prevalence[class_id]) {
            let style = ClassStyle::for_class(name, class_id);
            abnormalities.push(sample_abnormality(
                &mut rng,
                class_id,
                style,
                &left.ellipse,
                &right.ellipse,
                &heart.ellipse,
            ));
        }
    }
    SceneSpec {
        left_lung: left,
        right_lung: right,
        heart,
        abnormalities,
        noise_sigma: config.noise_sigma,
        rng_seed: mix64(seed),
    }
}

pub fn build_sample(config: &DatasetConfig, vocab: &Vocabulary, index: usize, scene: SceneSpec) -> Result<Sample> {
    let image = render_image(&scene, config.image_size)?;
    let mask = rasterize_mask(&scene, config.image_size);
    let labels = (0..config.n_classes()).map(|c| u8::from(scene.has_class(c))).collect();
    let report = make_report(&scene, &config.classes, vocab, config.max_report_len)?;
    Ok(Sample { index, image, labels, mask, report, scene })
}

/// Generates `config.n_samples` samples, ordered by index.
pub fn generate_dataset(config: &DatasetConfig) -> Result<Vec<Sample>> {
    config.validate()?;
    let vocab = Vocabulary::for_classes(&config.classes)?;
    (0..config.n_samples)
        .into_par_iter()
        .map(|i| build_sample(config, &vocab, i, generate_scene(config, i)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Largest-remainder apportionment of `n` items.
fn apportion(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes = [0usize; 3];
    for (s, e) in sizes.iter_mut().zip(&exact) {
        *s = (e + 1e-9).floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - sizes[a] as f64;
        let rb = exact[b] - sizes[b] as f64;
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut left = n - sizes.iter().sum::<usize>();
    for &i in &order {
        if left == 0 {
            break;
        }
        if ratios[i] > 0.0 {
            sizes[i] += 1;
            left -= 1;
        }
    }
    sizes
}

/// Stratified train/val/test split over sample indices.
///
/// Samples are grouped by their label vector, shuffled within each group
/// under `seed`, concatenated, and dealt out so that every prefix of the
/// sequence tracks the target proportions. This keeps each label pattern
/// (and so each class) represented in proportion in every split.
pub fn split(labels: &[Vec<u8>], ratios: [f64; 3], seed: u64) -> Result<Split> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config("split_ratios", "ratios must lie in [0,1] and sum to 1"));
    }
    let n = labels.len();
    let sizes = apportion(n, &ratios);
    for (name, (&size, &ratio)) in ["train", "val", "test"].iter().zip(sizes.iter().zip(&ratios)) {
        if ratio > 0.0 && size == 0 {
            return Err(Error::config("split_ratios", format!("{name} split would be empty for {n} samples")));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order.sort_by(|&a, &b| labels[a].cmp(&labels[b]));

    let mut assigned = [0usize; 3];
    let mut parts: [Vec<usize>; 3] = Default::default();
    for (pos, &idx) in order.iter().enumerate() {
        let done = (pos + 1) as f64;
        let pick = (0..3)
            .filter(|&s| assigned[s] < sizes[s])
            .max_by(|&a, &b| {
                let da = sizes[a] as f64 * done / n as f64 - assigned[a] as f64;
                let db = sizes[b] as f64 * done / n as f64 - assigned[b] as f64;
                da.partial_cmp(&db).unwrap().then(b.cmp(&a))
            })
            .expect("sizes sum to n");
        assigned[pick] += 1;
        parts[pick].push(idx);
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    let [train, val, test] = parts;
    Ok(Split { train, val, test })
}

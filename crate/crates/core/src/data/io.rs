//! Dataset directory layout:
//!
//! ```text
//! images/{index:06}.png   8-bit grayscale
//! masks/{index:06}.png    0 / 255
//! manifest.jsonl          one record per sample
//! vocab.json              token → id
//! dataset_config.json
//! splits.json
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat};
use serde::{Deserialize, Serialize};

use super::dataset::{split, DatasetConfig, Sample, Split};
use super::image::{preprocess, Image};
use super::scene::SceneSpec;
use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub index: usize,
    pub labels: Vec<u8>,
    pub report_tokens: Vec<usize>,
    pub report_text: String,
    pub scene: SceneSpec,
}

pub fn image_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("images").join(format!("{index:06}.png"))
}

pub fn mask_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("masks").join(format!("{index:06}.png"))
}

pub fn write_png_gray(path: &Path, width: usize, height: usize, pixels: Vec<u8>) -> Result<()> {
    let img = GrayImage::from_raw(width as u32, height as u32, pixels)
        .ok_or_else(|| Error::Shape("gray buffer does not match dimensions".into()))?;
    img.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

pub fn write_json_pretty<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn write_dataset(dir: &Path, config: &DatasetConfig, samples: &[Sample]) -> Result<()> {
    let vocab = Vocabulary::for_classes(&config.classes)?;
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("masks"))?;
    let mut manifest = BufWriter::new(fs::File::create(dir.join("manifest.jsonl"))?);
    for s in samples {
        write_png_gray(&image_path(dir, s.index), s.image.width(), s.image.height(), s.image.to_gray8())?;
        let mask = s.mask.iter().map(|&m| if m > 0 { 255 } else { 0 }).collect();
        write_png_gray(&mask_path(dir, s.index), s.image.width(), s.image.height(), mask)?;
        let record = ManifestRecord {
            index: s.index,
            labels: s.labels.clone(),
            report_tokens: s.report.clone(),
            report_text: vocab.decode(&s.report),
            scene: s.scene.clone(),
        };
        serde_json::to_writer(&mut manifest, &record)?;
        manifest.write_all(b"\n")?;
    }
    manifest.flush()?;
    write_json_pretty(&dir.join("vocab.json"), &vocab)?;
    write_json_pretty(&dir.join("dataset_config.json"), config)?;
    let labels: Vec<Vec<u8>> = samples.iter().map(|s| s.labels.clone()).collect();
    let splits = split(&labels, config.split_ratios, config.master_seed)?;
    write_json_pretty(&dir.join("splits.json"), &splits)?;
    Ok(())
}

/// One preprocessed example ready for the models.
#[derive(Clone, Debug)]
pub struct Example<T> {
    pub index: usize,
    /// `[1, H, W]` with values in `[0, 1]`.
    pub image: Tensor<T>,
    pub labels: Vec<T>,
    pub mask: Vec<T>,
    pub report: Vec<usize>,
    pub scene: SceneSpec,
}

impl<T: Scalar> Example<T> {
    /// Same values the on-disk PNG round trip produces.
    pub fn from_sample(s: &Sample) -> Self {
        let quantized: Vec<T> = s.image.to_gray8().iter().map(|&p| T::lit(p as f64 / 255.0)).collect();
        Self {
            index: s.index,
            image: Tensor::from_vec(&[1, s.image.height(), s.image.width()], quantized).expect("square image"),
            labels: s.labels.iter().map(|&l| T::lit(l as f64)).collect(),
            mask: s.mask.iter().map(|&m| T::lit(m as f64)).collect(),
            report: s.report.clone(),
            scene: s.scene.clone(),
        }
    }
}

pub struct Dataset<T> {
    pub config: DatasetConfig,
    pub vocab: Vocabulary,
    pub records: Vec<ManifestRecord>,
    pub examples: Vec<Example<T>>,
    pub splits: Split,
}

impl<T: Scalar> Dataset<T> {
    pub fn subset(&self, indices: &[usize]) -> Vec<&Example<T>> {
        indices.iter().map(|&i| &self.examples[i]).collect()
    }
}

fn read_gray(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    Ok((h as usize, w as usize, img.into_raw()))
}

pub fn read_config(dir: &Path) -> Result<DatasetConfig> {
    let path = dir.join("dataset_config.json");
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Loads a dataset directory, running every image through
/// pad → normalize(255) → resize(image_size).
pub fn load_dataset<T: Scalar>(dir: &Path) -> Result<Dataset<T>> {
    let config = read_config(dir)?;
    let vocab_path = dir.join("vocab.json");
    if !vocab_path.exists() {
        return Err(Error::MissingArtifact(vocab_path));
    }
    let vocab: Vocabulary = serde_json::from_str(&fs::read_to_string(&vocab_path)?)?;
    let manifest_path = dir.join("manifest.jsonl");
    if !manifest_path.exists() {
        return Err(Error::MissingArtifact(manifest_path));
    }
    let mut records = Vec::new();
    for line in BufReader::new(fs::File::open(&manifest_path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            records.push(serde_json::from_str::<ManifestRecord>(&line)?);
        }
    }
    let size = config.image_size;
    let mut examples = Vec::with_capacity(records.len());
    for (pos, r) in records.iter().enumerate() {
        if r.index != pos {
            return Err(Error::Contract(format!("manifest record {pos} has index {}", r.index)));
        }
        let (h, w, raw) = read_gray(&image_path(dir, r.index))?;
        let img = Image::new(h, w, raw.iter().map(|&p| T::lit(p as f64)).collect())?;
        let img = preprocess(&img, T::lit(255.0), size)?;
        let (mh, mw, mraw) = read_gray(&mask_path(dir, r.index))?;
        let mask = Image::new(mh, mw, mraw.iter().map(|&p| T::lit(if p > 127 { 1.0 } else { 0.0 })).collect())?;
        let mask = preprocess(&mask, T::one(), size)?;
        examples.push(Example {
            index: r.index,
            image: Tensor::from_vec(&[1, size, size], img.pixels().to_vec())?,
            labels: r.labels.iter().map(|&l| T::lit(l as f64)).collect(),
            mask: mask.pixels().iter().map(|&m| if m >= T::lit(0.5) { T::one() } else { T::zero() }).collect(),
            report: r.report_tokens.clone(),
            scene: r.scene.clone(),
        });
    }
    let splits_path = dir.join("splits.json");
    let splits = if splits_path.exists() {
        serde_json::from_str(&fs::read_to_string(splits_path)?)?
    } else {
        let labels: Vec<Vec<u8>> = records.iter().map(|r| r.labels.clone()).collect();
        split(&labels, config.split_ratios, config.master_seed)?
    };
    Ok(Dataset { config, vocab, records, examples, splits })
}

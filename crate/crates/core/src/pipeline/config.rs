use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::dataset::DatasetConfig;
use crate::distill::{DistillConfig, Task, TeacherConfig};
use crate::error::{Error, Result};
use crate::interpret::{CamLayer, Colormap, LimeConfig, Provenance};
use crate::models::ModelConfig;
use crate::story::Audience;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub methods: Vec<Provenance>,
    pub cam_layer: CamLayer,
    pub colormap: Colormap,
    /// Peak opacity of heatmap overlays.
    pub blend: f64,
    /// Sample indices to explain; empty means the first `default_count`
    /// test-split samples.
    pub samples: Vec<usize>,
    pub default_count: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            methods: Provenance::ALL.to_vec(),
            cam_layer: CamLayer::default(),
            colormap: Colormap::default(),
            blend: 0.5,
            samples: Vec::new(),
            default_count: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoryConfig {
    pub audiences: Vec<Audience>,
    /// A class is a finding when its sigmoid output exceeds this.
    pub threshold: f64,
}

impl Default for StoryConfig {
    fn default() -> Self {
        Self { audiences: Audience::ALL.to_vec(), threshold: 0.5 }
    }
}

/// Validation-split floors each teacher must reach.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityFloors {
    pub macro_f1: f64,
    pub dice: f64,
    pub token_accuracy: f64,
}

impl Default for QualityFloors {
    fn default() -> Self {
        Self { macro_f1: 0.9, dice: 0.8, token_accuracy: 0.85 }
    }
}

impl QualityFloors {
    pub fn for_task(&self, task: Task) -> f64 {
        match task {
            Task::Abnormality => self.macro_f1,
            Task::Segmentation => self.dice,
            Task::Report => self.token_accuracy,
        }
    }
}

/// Every setting of a run, merged from the config file and flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub teacher: TeacherConfig,
    pub distill: DistillConfig,
    pub lime: LimeConfig,
    pub explain: ExplainConfig,
    pub story: StoryConfig,
    pub floors: QualityFloors,
    /// Where everything is written. Not part of the config hash.
    pub output_root: PathBuf,
}

fn unit_interval(field: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::config(field, format!("{v} outside [0, 1]")))
    }
}

impl RunConfig {
    /// Parses a JSON config; unknown or mistyped fields are configuration
    /// errors.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.teacher.validate()?;
        self.distill.validate()?;
        self.lime.validate()?;
        if self.explain.methods.is_empty() {
            return Err(Error::config("explain.methods", "at least one method is required"));
        }
        unit_interval("explain.blend", self.explain.blend)?;
        if self.story.audiences.is_empty() {
            return Err(Error::config("story.audiences", "at least one audience is required"));
        }
        if !(self.story.threshold > 0.0 && self.story.threshold < 1.0) {
            return Err(Error::config("story.threshold", format!("{} outside (0, 1)", self.story.threshold)));
        }
        unit_interval("floors.macro_f1", self.floors.macro_f1)?;
        unit_interval("floors.dice", self.floors.dice)?;
        unit_interval("floors.token_accuracy", self.floors.token_accuracy)?;
        Ok(())
    }

    /// SHA-256 of the config with the output root cleared, so identical
    /// settings hash equally wherever they are written.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_root = PathBuf::new();
        let v = serde_json::to_vec(&c)?;
        Ok(hex::encode(Sha256::digest(v)))
    }

    /// Sets the dataset's master seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.dataset.master_seed = seed;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
        assert_eq!(RunConfig::from_json("{}").unwrap(), c);
    }

    #[test]
    fn partial_files_override_defaults() {
        let c = RunConfig::from_json(r#"{"dataset": {"n_samples": 10}, "distill": {"alpha": 0.0}}"#).unwrap();
        assert_eq!(c.dataset.n_samples, 10);
        assert_eq!(c.distill.alpha, 0.0);
        assert_eq!(c.dataset.image_size, 64);
    }

    #[test]
    fn bad_fields_are_config_errors() {
        assert!(matches!(RunConfig::from_json(r#"{"dataset": {"n_sample": 10}}"#), Err(Error::Config { .. })));
        let err = RunConfig::from_json(r#"{"explain": {"methods": ["shap"]}}"#).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
        let c = RunConfig { story: StoryConfig { threshold: 1.0, ..Default::default() }, ..Default::default() };
        assert!(matches!(c.validate(), Err(Error::Config { field, .. }) if field == "story.threshold"));
    }

    #[test]
    fn hash_ignores_the_output_root() {
        let a = RunConfig { output_root: "/tmp/a".into(), ..Default::default() };
        let b = RunConfig { output_root: "/tmp/b".into(), ..Default::default() };
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        assert_ne!(a.hash().unwrap(), a.clone().with_seed(1).hash().unwrap());
    }
}

//! The end-to-end run: dataset generation, teacher training, distillation,
//! explanations, stories and evaluation, all under one output root.
//!
//! ```text
//! <root>/.lock                       held while a command runs
//! <root>/run_meta.json               wall-clock start times, the only non-deterministic file
//! <root>/config/<command>.json       resolved configuration of each command
//! <root>/data/                       dataset directory
//! <root>/teachers/<task>/            checkpoint, train_log.json, train_log.csv
//! <root>/student/                    checkpoint, train_log.json, train_log.csv, frozen_checksums.json
//! <root>/explain/<sample>/           heatmaps, overlays, LIME JSON, heatmap_meta.json, explanations.json
//! <root>/story/<sample>/<audience>/  index.html, story.json, assets/
//! <root>/metrics.json, metrics.csv   test-split evaluation
//! ```

mod config;
mod stages;

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::data::io::write_json_pretty;
use crate::distill::Task;
use crate::error::{Error, Result};
use crate::story::Audience;

pub use config::{ExplainConfig, QualityFloors, RunConfig, StoryConfig};
pub use stages::{
    distill, evaluate, explain, explain_sample, gen_data, story, train_teachers, DistillSummary, GenDataSummary,
    MetricsReport, TeacherSummary,
};

/// Paths under an output root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn teacher(&self, task: Task) -> PathBuf {
        self.root.join("teachers").join(task.name())
    }

    pub fn student(&self) -> PathBuf {
        self.root.join("student")
    }

    pub fn explain(&self, sample: usize) -> PathBuf {
        self.root.join("explain").join(sample_dir(sample))
    }

    pub fn story(&self, sample: usize, audience: Audience) -> PathBuf {
        self.root.join("story").join(sample_dir(sample)).join(audience.name())
    }

    pub fn metrics_json(&self) -> PathBuf {
        self.root.join("metrics.json")
    }

    pub fn metrics_csv(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn config(&self, command: &str) -> PathBuf {
        self.root.join("config").join(format!("{command}.json"))
    }

    pub fn run_meta(&self) -> PathBuf {
        self.root.join("run_meta.json")
    }

    pub fn lock(&self) -> PathBuf {
        self.root.join(".lock")
    }
}

pub fn sample_dir(sample: usize) -> String {
    format!("{sample:06}")
}

/// Exclusive claim on an output root, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(layout: &Layout) -> Result<Self> {
        fs::create_dir_all(&layout.root)?;
        let path = layout.lock();
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(path)),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Records the start of `command` in `run_meta.json` (unix seconds by
/// command name) and persists its resolved config.
pub fn record_start(layout: &Layout, command: &str, config: &RunConfig) -> Result<()> {
    let path = layout.run_meta();
    let mut meta: BTreeMap<String, BTreeMap<String, u64>> = match fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).unwrap_or_default(),
        Err(_) => BTreeMap::new(),
    };
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    meta.entry("started_unix".into()).or_default().insert(command.into(), now);
    write_json_pretty(&path, &meta)?;
    let cfg_path = layout.config(command);
    fs::create_dir_all(cfg_path.parent().expect("config dir"))?;
    write_json_pretty(&cfg_path, config)
}

/// Removes and recreates `dir`.
pub(crate) fn fresh_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let layout = Layout::new(dir.path());
        let lock = OutputLock::acquire(&layout).unwrap();
        assert!(matches!(OutputLock::acquire(&layout), Err(Error::Locked(_))));
        drop(lock);
        OutputLock::acquire(&layout).unwrap();
    }

    #[test]
    fn run_meta_keeps_every_command() {
        let dir = tempfile::tempdir().unwrap();
        let layout = Layout::new(dir.path());
        record_start(&layout, "gen-data", &RunConfig::default()).unwrap();
        record_start(&layout, "distill", &RunConfig::default()).unwrap();
        let meta: BTreeMap<String, BTreeMap<String, u64>> =
            serde_json::from_str(&fs::read_to_string(layout.run_meta()).unwrap()).unwrap();
        assert_eq!(meta["started_unix"].len(), 2);
        assert!(layout.config("distill").exists());
    }
}

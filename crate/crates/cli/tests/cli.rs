//! Command-line contract on a tiny configuration: exit codes, overrides,
//! artifacts and byte-identical reruns.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"{
  "dataset": {"n_samples": 40, "image_size": 32},
  "teacher": {"epochs": 2},
  "distill": {"epochs": 2},
  "lime": {"n_samples": 40},
  "story": {"threshold": 0.1},
  "explain": {"default_count": 2},
  "floors": {"macro_f1": 0.0, "dice": 0.0, "token_accuracy": 0.0}
}"#;

struct Run {
    _dir: tempfile::TempDir,
    out: PathBuf,
    config: PathBuf,
}

impl Run {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("config.json");
        fs::write(&cfg, config).unwrap();
        Self { out: dir.path().join("out"), config: cfg, _dir: dir }
    }

    fn cmd(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_storyxai"))
            .arg("--config")
            .arg(&self.config)
            .arg("--out")
            .arg(&self.out)
            .arg("--quiet")
            .args(args)
            .env_remove("DISTILL_STORY_OUT")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) {
        let o = self.cmd(args);
        assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    }

    fn prepared(config: &str) -> Self {
        let r = Self::new(config);
        r.ok(&["gen-data"]);
        r.ok(&["train-teachers"]);
        r.ok(&["distill"]);
        r
    }
}

fn stderr_line(o: &Output) -> String {
    let text = String::from_utf8_lossy(&o.stderr).to_string();
    assert_eq!(text.trim_end().lines().count(), 1, "stderr should be one line: {text}");
    text.trim_end().to_string()
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_data_override_and_identical_rerun() {
    let r = Run::new(TINY);
    let o = Command::new(env!("CARGO_BIN_EXE_storyxai"))
        .args(["--config", r.config.to_str().unwrap(), "--out", r.out.to_str().unwrap(), "gen-data", "--n-samples", "10"])
        .output()
        .unwrap();
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout).to_string();
    assert!(stdout.contains("generated 10 samples"));
    let manifest = fs::read(r.out.join("data/manifest.jsonl")).unwrap();
    assert_eq!(manifest.iter().filter(|&&b| b == b'\n').count(), 10);
    r.ok(&["gen-data", "--n-samples", "10"]);
    assert_eq!(fs::read(r.out.join("data/manifest.jsonl")).unwrap(), manifest);
    let resolved: Value = serde_json::from_str(&fs::read_to_string(r.out.join("config/gen-data.json")).unwrap()).unwrap();
    assert_eq!(resolved["dataset"]["n_samples"], 10);
    assert!(r.out.join("run_meta.json").exists());
    assert!(!r.out.join(".lock").exists());
}

#[test]
fn configuration_errors_exit_2() {
    let r = Run::new(r#"{"dataset": {"n_samples": 0}}"#);
    let o = r.cmd(&["gen-data"]);
    assert_eq!(o.status.code(), Some(2));
    let line = stderr_line(&o);
    assert!(line.starts_with("error[E_CONFIG]:") && line.contains("n_samples"), "{line}");

    let r = Run::new(r#"{"dataset": {"n_sampels": 3}}"#);
    assert_eq!(r.cmd(&["gen-data"]).status.code(), Some(2));

    let r = Run::new(TINY);
    let o = r.cmd(&["explain", "--methods", "gradcam,shap"]);
    assert_eq!(o.status.code(), Some(2));
    let line = stderr_line(&o);
    for m in ["gradcam", "gradcampp", "lime", "attention"] {
        assert!(line.contains(m), "{line}");
    }
    assert_eq!(r.cmd(&["train-teachers", "--only", "vision"]).status.code(), Some(2));
    assert_eq!(r.cmd(&["story", "--audiences", "patient"]).status.code(), Some(2));
    assert_eq!(r.cmd(&["distill", "--alpha", "1.5"]).status.code(), Some(2));
    let o = r.cmd(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).starts_with("error[E_USAGE]"));
}

#[test]
fn missing_artifacts_and_floors_exit_3() {
    let r = Run::new(TINY);
    r.ok(&["gen-data"]);
    let o = r.cmd(&["distill"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr_line(&o).starts_with("error[E_MISSING_ARTIFACT]"));

    let strict = TINY.replace(r#""token_accuracy": 0.0"#, r#""token_accuracy": 1.0"#);
    let r = Run::new(&strict);
    r.ok(&["gen-data"]);
    let o = r.cmd(&["train-teachers", "--only", "report"]);
    assert_eq!(o.status.code(), Some(3));
    let line = stderr_line(&o);
    assert!(line.starts_with("error[E_QUALITY_FLOOR]") && line.contains("report"), "{line}");
    assert!(r.out.join("teachers/report/meta.json").exists());
}

#[test]
fn only_flag_trains_one_teacher() {
    let r = Run::new(TINY);
    r.ok(&["gen-data"]);
    r.ok(&["train-teachers", "--only", "abnormality"]);
    let dirs: Vec<String> =
        fs::read_dir(r.out.join("teachers")).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    assert_eq!(dirs, vec!["abnormality".to_string()]);
}

#[test]
fn lock_file_blocks_a_second_writer() {
    let r = Run::new(TINY);
    fs::create_dir_all(&r.out).unwrap();
    fs::write(r.out.join(".lock"), "1").unwrap();
    let o = r.cmd(&["gen-data"]);
    assert!(!o.status.success());
    assert!(stderr_line(&o).starts_with("error[E_LOCKED]"));
}

#[test]
fn output_root_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_storyxai"))
        .args(["--quiet", "gen-data", "--n-samples", "20"])
        .env("DISTILL_STORY_OUT", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("data/manifest.jsonl").exists());
}

#[test]
fn distill_with_zero_alpha_logs_the_distillation_column() {
    let r = Run::new(TINY);
    r.ok(&["gen-data"]);
    r.ok(&["train-teachers"]);
    r.ok(&["distill", "--alpha", "0"]);
    let log: Value = serde_json::from_str(&fs::read_to_string(r.out.join("student/train_log.json")).unwrap()).unwrap();
    let records = log["records"].as_array().unwrap();
    assert_eq!(records.len(), 3 * 2);
    for rec in records {
        assert!(rec["distill_loss"].as_f64().unwrap() >= 0.0);
        assert_eq!(rec["combined"], rec["task_loss"]);
    }
    let csv = fs::read_to_string(r.out.join("student/train_log.csv")).unwrap();
    assert!(csv.starts_with("phase,epoch,task_loss,distill_loss,combined,metric"));
    let proofs: Value = serde_json::from_str(&fs::read_to_string(r.out.join("student/frozen_checksums.json")).unwrap()).unwrap();
    for phase in proofs.as_array().unwrap() {
        let cps = phase["checkpoints"].as_array().unwrap();
        assert_eq!(cps.len(), 3);
        assert!(cps.windows(2).all(|w| w[0] == w[1]));
    }
}

#[test]
fn explain_story_and_evaluate() {
    let r = Run::prepared(TINY);

    r.ok(&["explain", "--methods", "gradcam"]);
    let explain = r.out.join("explain");
    let samples: Vec<PathBuf> = fs::read_dir(&explain).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(samples.len(), 2);
    let mut any = false;
    for s in &samples {
        let metas: Value = serde_json::from_str(&fs::read_to_string(s.join("heatmap_meta.json")).unwrap()).unwrap();
        for m in metas.as_array().unwrap() {
            assert_eq!(m["provenance"], "gradcam");
            any = true;
        }
        for f in fs::read_dir(s).unwrap() {
            let name = f.unwrap().file_name().to_string_lossy().into_owned();
            assert!(!name.starts_with("lime") && !name.starts_with("attention") && !name.starts_with("gradcampp"), "{name}");
        }
    }
    assert!(any, "the tiny threshold should produce at least one finding");
    let first = tree(&explain);
    r.ok(&["explain", "--methods", "gradcam"]);
    assert_eq!(tree(&explain), first);

    r.ok(&["story"]);
    let story = r.out.join("story");
    for s in fs::read_dir(&story).unwrap() {
        let s = s.unwrap().path();
        for audience in ["domain_expert", "ml_practitioner"] {
            let d = s.join(audience);
            assert!(d.join("index.html").is_file() && d.join("story.json").is_file() && d.join("assets").is_dir());
        }
    }
    let first = tree(&story);
    r.ok(&["story"]);
    assert_eq!(tree(&story), first);

    r.ok(&["story", "--samples", "0", "--audiences", "domain_expert"]);
    assert!(r.out.join("story/000000/domain_expert/story.json").exists());
    assert!(!r.out.join("story/000000/ml_practitioner").exists());

    r.ok(&["evaluate"]);
    let m: Value = serde_json::from_str(&fs::read_to_string(r.out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["split"], "test");
    let tasks = m["tasks"].as_array().unwrap();
    assert_eq!(tasks.len(), 3);
    let mut fields = 0;
    for t in tasks {
        for k in ["student", "teacher", "agreement"] {
            assert!(t[k].is_f64());
            fields += 1;
        }
    }
    assert_eq!(fields, 9);
    let csv = fs::read_to_string(r.out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{fresh_dir, Layout, RunConfig};
use crate::data::dataset::generate_dataset;
use crate::data::io::{load_dataset, write_dataset, write_json_pretty, Dataset, Example};
use crate::data::vocab::Vocabulary;
use crate::distill::{
    bce_with_logits, dice_loss, distill_student, masked_cross_entropy, new_student, train_teacher, Task, TrainLog, DICE_EPS,
};
use crate::error::{Error, Result};
use crate::interpret::{
    attention_heatmaps, cam_laterality, grad_cam, grad_cam_pp, lime_explain, lime_heatmap, mask_overlay, overlay,
    segment_grid, write_heatmap_png, write_overlay_png, ClassExplanation, ExplanationSet, Heatmap, HeatmapMeta, LimeRecord,
    Provenance,
};
use crate::metrics::{agreement, head_output, head_outputs, metric_name, report_io, task_metric, TaskMetrics};
use crate::models::{
    forward_classifier, load_student, load_teacher, save_student, save_teacher, student_forward, ProblemShape, Student,
    Teacher,
};
use crate::scalar::Scalar;
use crate::story::{build_story, predicted_classes, render_html, render_json, Diagnostics, StoryInputs, StoryMetadata};
use crate::tensor::Tensor;

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn shape_of<T>(ds: &Dataset<T>) -> ProblemShape {
    ProblemShape {
        image_size: ds.config.image_size,
        n_classes: ds.config.n_classes(),
        vocab_size: ds.vocab.len(),
        max_report_len: ds.config.max_report_len,
    }
}

fn nonempty<'a, T>(examples: Vec<&'a Example<T>>, split: &str) -> Result<Vec<&'a Example<T>>> {
    if examples.is_empty() {
        Err(Error::config("dataset.split_ratios", format!("the {split} split is empty")))
    } else {
        Ok(examples)
    }
}

fn load_teacher_for<T: Scalar>(layout: &Layout, task: Task, vocab: &Vocabulary) -> Result<Teacher<T>> {
    let (teacher, meta) = load_teacher::<T>(&layout.teacher(task))?;
    if teacher.task() != task {
        return Err(Error::Checkpoint(format!("{} holds a {} teacher", layout.teacher(task).display(), teacher.task())));
    }
    if meta.vocab_hash != vocab.hash() {
        return Err(Error::Checkpoint(format!("the {task} teacher was trained on a different vocabulary")));
    }
    Ok(teacher)
}

fn load_teachers<T: Scalar>(layout: &Layout, vocab: &Vocabulary) -> Result<Vec<Teacher<T>>> {
    Task::ALL.iter().map(|&t| load_teacher_for(layout, t, vocab)).collect()
}

fn load_student_for<T: Scalar>(layout: &Layout, vocab: &Vocabulary) -> Result<Student<T>> {
    let (student, meta) = load_student::<T>(&layout.student())?;
    if meta.vocab_hash != vocab.hash() {
        return Err(Error::Checkpoint("the student was trained on a different vocabulary".into()));
    }
    Ok(student)
}

fn write_log(dir: &Path, log: &TrainLog) -> Result<()> {
    write_json_pretty(&dir.join("train_log.json"), log)?;
    fs::write(dir.join("train_log.csv"), log.to_csv())?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenDataSummary {
    pub n_samples: usize,
    pub manifest_sha256: String,
}

/// Generates the synthetic dataset into `<root>/data`, replacing any
/// previous one.
pub fn gen_data(cfg: &RunConfig, layout: &Layout) -> Result<GenDataSummary> {
    cfg.dataset.validate()?;
    let samples = generate_dataset(&cfg.dataset)?;
    let dir = layout.data();
    fresh_dir(&dir)?;
    write_dataset(&dir, &cfg.dataset, &samples)?;
    let manifest = fs::read(dir.join("manifest.jsonl"))?;
    Ok(GenDataSummary { n_samples: samples.len(), manifest_sha256: sha256_hex(&manifest) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherSummary {
    pub task: Task,
    pub metric: String,
    /// Best validation value.
    pub value: f64,
    pub floor: f64,
}

/// Trains the teachers (all three, or only `only`) and saves each before
/// checking its floor, so a failing run still leaves inspectable artifacts.
pub fn train_teachers<T: Scalar>(cfg: &RunConfig, layout: &Layout, only: Option<Task>) -> Result<Vec<TeacherSummary>> {
    cfg.teacher.validate()?;
    let ds = load_dataset::<T>(&layout.data())?;
    let train = nonempty(ds.subset(&ds.splits.train), "train")?;
    let val = nonempty(ds.subset(&ds.splits.val), "validation")?;
    let tasks = only.map_or_else(|| Task::ALL.to_vec(), |t| vec![t]);
    let mut out = Vec::new();
    for task in tasks {
        let (teacher, log) = train_teacher(task, &cfg.model, shape_of(&ds), &train, &val, &cfg.teacher)?;
        let dir = layout.teacher(task);
        fresh_dir(&dir)?;
        save_teacher(&teacher, &dir, &ds.vocab.hash(), cfg.teacher.seed)?;
        write_log(&dir, &log)?;
        out.push(TeacherSummary {
            task,
            metric: metric_name(task).to_string(),
            value: log.phase_end_metric[task.name()],
            floor: cfg.floors.for_task(task),
        });
    }
    if let Some(s) = out.iter().find(|s| s.value < s.floor) {
        return Err(Error::QualityFloor {
            task: s.task.name().to_string(),
            message: format!("teacher {} {:.4} is below the floor {:.4}", s.metric, s.value, s.floor),
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillSummary {
    /// Validation agreement at the end of each phase.
    pub phase_end: BTreeMap<String, f64>,
    /// Validation agreement of every head after the last phase.
    pub final_agreement: BTreeMap<String, f64>,
    pub frozen_heads_constant: bool,
}

/// Runs the sequential distillation and saves the student with its log and
/// the frozen-head checksums of every phase.
pub fn distill<T: Scalar>(cfg: &RunConfig, layout: &Layout) -> Result<DistillSummary> {
    cfg.distill.validate()?;
    let ds = load_dataset::<T>(&layout.data())?;
    let teachers = load_teachers::<T>(layout, &ds.vocab)?;
    let train = nonempty(ds.subset(&ds.splits.train), "train")?;
    let val = nonempty(ds.subset(&ds.splits.val), "validation")?;
    let student = new_student::<T>(&cfg.model, shape_of(&ds))?;
    let (student, log) = distill_student(student, &teachers, &train, &val, &cfg.distill)?;
    let dir = layout.student();
    fresh_dir(&dir)?;
    save_student(&student, &dir, &ds.vocab.hash(), cfg.distill.seed)?;
    write_log(&dir, &log)?;
    write_json_pretty(&dir.join("frozen_checksums.json"), &log.frozen_checksums)?;
    Ok(DistillSummary {
        phase_end: log.phase_end_metric.clone(),
        final_agreement: log.final_metric.clone(),
        frozen_heads_constant: log.frozen_checksums.iter().all(|p| p.constant()),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub n_samples: usize,
    pub tasks: Vec<TaskMetrics>,
    /// Final over phase-end classification agreement of the student on the
    /// validation split.
    pub abnormality_retention: f64,
}

impl MetricsReport {
    pub fn task(&self, task: Task) -> Option<&TaskMetrics> {
        self.tasks.iter().find(|m| m.task == task)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,metric,student,teacher,agreement\n");
        for m in &self.tasks {
            let _ = writeln!(out, "{},{},{:.6},{:.6},{:.6}", m.task, m.metric, m.student, m.teacher, m.agreement);
        }
        out
    }
}

/// Student and teacher quality and their agreement on the test split.
pub fn evaluate<T: Scalar>(_cfg: &RunConfig, layout: &Layout) -> Result<MetricsReport> {
    let ds = load_dataset::<T>(&layout.data())?;
    let test = nonempty(ds.subset(&ds.splits.test), "test")?;
    let student = load_student_for::<T>(layout, &ds.vocab)?;
    let vocab = ds.vocab.len();
    let mut tasks = Vec::new();
    for task in Task::ALL {
        let teacher = load_teacher_for::<T>(layout, task, &ds.vocab)?;
        let s = head_outputs(student.network(), task, &test)?;
        let t = head_outputs(teacher.network(), task, &test)?;
        tasks.push(TaskMetrics {
            task,
            metric: metric_name(task).to_string(),
            student: task_metric(task, &s, &test, vocab),
            teacher: task_metric(task, &t, &test, vocab),
            agreement: agreement(task, &s, &t, vocab),
        });
    }
    let log_path = layout.student().join("train_log.json");
    if !log_path.exists() {
        return Err(Error::MissingArtifact(log_path));
    }
    let log: TrainLog = serde_json::from_str(&fs::read_to_string(&log_path)?)?;
    let name = Task::Abnormality.name();
    let abnormality_retention = match (log.final_metric.get(name), log.phase_end_metric.get(name)) {
        (Some(&f), Some(&p)) if p > 0.0 => f / p,
        _ => 1.0,
    };
    let report = MetricsReport { split: "test".into(), n_samples: test.len(), tasks, abnormality_retention };
    write_json_pretty(&layout.metrics_json(), &report)?;
    fs::write(layout.metrics_csv(), report.to_csv())?;
    Ok(report)
}

fn resolve_samples<T>(cfg: &RunConfig, ds: &Dataset<T>, requested: &[usize]) -> Result<Vec<usize>> {
    let ids: Vec<usize> = if !requested.is_empty() {
        requested.to_vec()
    } else if !cfg.explain.samples.is_empty() {
        cfg.explain.samples.clone()
    } else {
        ds.splits.test.iter().copied().take(cfg.explain.default_count).collect()
    };
    if ids.is_empty() {
        return Err(Error::config("explain.samples", "no samples to explain"));
    }
    if let Some(bad) = ids.iter().find(|&&i| i >= ds.examples.len()) {
        return Err(Error::config("explain.samples", format!("sample {bad} is not in the {}-sample dataset", ds.examples.len())));
    }
    let mut ids = ids;
    ids.sort_unstable();
    ids.dedup();
    Ok(ids)
}

struct MapWriter<'a, T> {
    dir: &'a Path,
    gray: &'a [T],
    size: usize,
    cfg: &'a RunConfig,
    metas: Vec<HeatmapMeta>,
}

impl<T: Scalar> MapWriter<'_, T> {
    fn save(&mut self, h: &Heatmap, stem: String, label: &str) -> Result<HeatmapMeta> {
        let (file, over) = (format!("{stem}.png"), format!("{stem}_overlay.png"));
        write_heatmap_png(&self.dir.join(&file), h)?;
        let rgb = overlay(self.gray, h, self.cfg.explain.colormap, self.cfg.explain.blend)?;
        write_overlay_png(&self.dir.join(&over), self.size, self.size, rgb)?;
        let meta = HeatmapMeta::new(h, file, over, label.to_string());
        self.metas.push(meta.clone());
        Ok(meta)
    }
}

/// Explains one sample with the configured methods into `dir` (recreated):
/// CAMs and LIME for every predicted-positive class, attention maps for
/// every decoded token, and the predicted mask overlay.
pub fn explain_sample<T: Scalar>(
    student: &Student<T>,
    ex: &Example<T>,
    classes: &[String],
    vocab: &Vocabulary,
    cfg: &RunConfig,
    dir: &Path,
) -> Result<ExplanationSet> {
    fresh_dir(dir)?;
    let net = student.network();
    let size = net.arch().image_size;
    let out = student_forward(student, &ex.image)?;
    let gray = ex.image.data();
    let methods = &cfg.explain.methods;
    let layer = cfg.explain.cam_layer;
    let mut w = MapWriter { dir, gray, size, cfg, metas: Vec::new() };

    let mut explained = Vec::new();
    for c in predicted_classes(&out.class_logits, cfg.story.threshold) {
        let name = &classes[c];
        let mut ce = ClassExplanation {
            class_id: c,
            class_name: name.clone(),
            gradcam: None,
            gradcampp: None,
            lime: None,
            laterality: None,
        };
        if methods.contains(&Provenance::GradCam) {
            let h = grad_cam(net, &ex.image, c, layer)?;
            ce.laterality = Some(cam_laterality(&h, name, c));
            ce.gradcam = Some(w.save(&h, format!("gradcam_c{c}"), name)?);
        }
        if methods.contains(&Provenance::GradCamPp) {
            let h = grad_cam_pp(net, &ex.image, c, layer)?;
            ce.laterality.get_or_insert_with(|| cam_laterality(&h, name, c));
            ce.gradcampp = Some(w.save(&h, format!("gradcampp_c{c}"), name)?);
        }
        if methods.contains(&Provenance::Lime) {
            let segments = segment_grid(size, size, cfg.lime.grid)?;
            let predict = |img: &[T]| -> Result<f64> {
                let t = Tensor::from_vec(&[1, size, size], img.to_vec())?;
                Ok(forward_classifier(net, &t)?[c].as_f64())
            };
            let e = lime_explain(predict, gray, c, &segments, &cfg.lime)?;
            let h = lime_heatmap(&e, &segments)?;
            let heatmap = w.save(&h, format!("lime_c{c}"), name)?;
            write_json_pretty(&dir.join(format!("lime_c{c}.json")), &e)?;
            ce.lime = Some(LimeRecord { explanation: e, heatmap });
        }
        explained.push(ce);
    }

    let mut attention = Vec::new();
    if methods.contains(&Provenance::Attention) {
        let maps = attention_heatmaps(&out.step_attention, out.attention_grid, size)?;
        for (t, h) in maps.iter().enumerate() {
            let label = vocab.token(out.tokens[t]).unwrap_or("<unk>");
            attention.push(w.save(h, format!("attention_t{t:02}"), label)?);
        }
    }

    let mask: Vec<bool> = out.mask_logits.iter().map(|&z| z > T::zero()).collect();
    let segmentation_overlay = "segmentation_overlay.png".to_string();
    write_overlay_png(&dir.join(&segmentation_overlay), size, size, mask_overlay(gray, &mask, 0.4)?)?;
    let mask_fraction = mask.iter().filter(|&&m| m).count() as f64 / mask.len().max(1) as f64;

    write_json_pretty(&dir.join("heatmap_meta.json"), &w.metas)?;
    let set = ExplanationSet {
        sample: ex.index,
        cam_layer: layer,
        classes: explained,
        attention,
        segmentation_overlay,
        mask_fraction,
    };
    write_json_pretty(&dir.join("explanations.json"), &set)?;
    Ok(set)
}

/// Explains `samples` (or the configured default set).
pub fn explain<T: Scalar>(cfg: &RunConfig, layout: &Layout, samples: &[usize]) -> Result<Vec<ExplanationSet>> {
    let ds = load_dataset::<T>(&layout.data())?;
    let ids = resolve_samples(cfg, &ds, samples)?;
    let student = load_student_for::<T>(layout, &ds.vocab)?;
    ids.iter()
        .map(|&i| explain_sample(&student, &ds.examples[i], &ds.config.classes, &ds.vocab, cfg, &layout.explain(i)))
        .collect()
}

fn diagnostics<T: Scalar>(student: &Student<T>, teachers: &[Teacher<T>], ex: &Example<T>, vocab: usize) -> Result<Diagnostics> {
    let net = student.network();
    let mut d = Diagnostics::default();
    for task in Task::ALL {
        let s = head_output(net, task, ex)?;
        let loss = match task {
            Task::Abnormality => bce_with_logits(&s, &ex.labels)?.value,
            Task::Segmentation => dice_loss(&s, &ex.mask, T::lit(DICE_EPS))?.value,
            Task::Report => masked_cross_entropy(&s, vocab, report_io(&ex.report).1)?.value,
        };
        d.losses.insert(task.name().to_string(), loss.as_f64());
        let teacher = teachers.iter().find(|t| t.task() == task).expect("one teacher per task");
        let t = head_output(teacher.network(), task, ex)?;
        d.teacher_agreement.insert(task.name().to_string(), agreement(task, &[s], &[t], vocab));
    }
    Ok(d)
}

/// Builds and renders a story per (sample, audience). Explanations are
/// recomputed with every method so each story has its full evidence.
/// Returns the story directories.
pub fn story<T: Scalar>(cfg: &RunConfig, layout: &Layout, samples: &[usize]) -> Result<Vec<PathBuf>> {
    let ds = load_dataset::<T>(&layout.data())?;
    let ids = resolve_samples(cfg, &ds, samples)?;
    let student = load_student_for::<T>(layout, &ds.vocab)?;
    let teachers = load_teachers::<T>(layout, &ds.vocab)?;
    let mut full = cfg.clone();
    full.explain.methods = Provenance::ALL.to_vec();

    let metadata = StoryMetadata {
        student_checksum: student.network().params().checksum_all(),
        teacher_checksums: teachers
            .iter()
            .map(|t| (t.task().name().to_string(), t.network().params().checksum_all()))
            .collect(),
        config_hash: cfg.hash()?,
        seeds: [
            ("dataset", ds.config.master_seed),
            ("model_init", cfg.model.init_seed),
            ("teacher", cfg.teacher.seed),
            ("distill", cfg.distill.seed),
            ("lime", cfg.lime.seed),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect(),
        threshold: cfg.story.threshold,
    };

    let mut dirs = Vec::new();
    for id in ids {
        let ex = &ds.examples[id];
        let src = layout.explain(id);
        let explanations = explain_sample(&student, ex, &ds.config.classes, &ds.vocab, &full, &src)?;
        let output = student_forward(&student, &ex.image)?;
        let diag = diagnostics(&student, &teachers, ex, ds.vocab.len())?;
        let inputs = StoryInputs {
            sample: id,
            output: &output,
            explanations: &explanations,
            classes: &ds.config.classes,
            vocab: &ds.vocab,
            diagnostics: &diag,
            metadata: &metadata,
        };
        for &audience in &cfg.story.audiences {
            let story = build_story(&inputs, audience)?;
            let dir = layout.story(id, audience);
            fresh_dir(&dir)?;
            render_html(&story, &src, &dir)?;
            fs::write(dir.join("story.json"), render_json(&story)?)?;
            dirs.push(dir);
        }
    }
    Ok(dirs)
}

//! Teacher training and the sequential three-phase distillation of the
//! multi-head student.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::losses::{check_alpha, combined_loss, distill_binary, distill_rows, task_loss, LossGrad, Task, TaskTarget};
use super::optim::{sgd_step, Adam, ParamGrads};
use super::softmax::check_temperature;
use crate::autograd::{Graph, Var};
use crate::data::dataset::mix64;
use crate::data::io::Example;
use crate::error::{Error, Result};
use crate::metrics::{agreement, head_outputs, report_io, task_metric};
use crate::models::{ArchConfig, Group, ModelConfig, Network, ProblemShape, Student, Teacher};
use crate::scalar::Scalar;
use crate::tensor::{argmax, Tensor};

/// What the task loss compares the student against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Labels, masks and reports from the dataset.
    #[default]
    GroundTruth,
    /// Thresholded or argmax teacher outputs in place of ground truth.
    Teacher,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self { epochs: 30, batch_size: 32, learning_rate: 3e-3, seed: 11 }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("teacher.epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("teacher.batch_size", "must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("teacher.learning_rate", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub temperature: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub phase_order: Vec<Task>,
    pub batch_size: usize,
    pub seed: u64,
    pub target_mode: TargetMode,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            temperature: 4.0,
            alpha: 0.7,
            learning_rate: 0.3,
            epochs: 45,
            phase_order: Task::ALL.to_vec(),
            batch_size: 32,
            seed: 13,
            target_mode: TargetMode::GroundTruth,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        check_temperature(self.temperature).map_err(|e| Error::config("distill.temperature", e.to_string()))?;
        check_alpha(self.alpha).map_err(|e| Error::config("distill.alpha", e.to_string()))?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("distill.learning_rate", "must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::config("distill.epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("distill.batch_size", "must be positive"));
        }
        let mut order = self.phase_order.clone();
        order.sort();
        let mut all = Task::ALL.to_vec();
        all.sort();
        if order != all {
            return Err(Error::config("distill.phase_order", "must list report, abnormality and segmentation once each"));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Task,
    pub epoch: usize,
    pub task_loss: f64,
    pub distill_loss: f64,
    pub combined: f64,
    /// Validation metric: ground-truth quality for teachers, agreement with
    /// the teacher for the student.
    pub metric: f64,
    /// Mean distillation loss on the validation split (student only).
    pub val_distill_loss: f64,
}

/// Checksums of the frozen heads at the start of a phase and after every
/// epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseChecksums {
    pub phase: Task,
    pub frozen: Vec<Task>,
    pub checkpoints: Vec<BTreeMap<String, String>>,
}

impl PhaseChecksums {
    pub fn constant(&self) -> bool {
        self.checkpoints.windows(2).all(|w| w[0] == w[1])
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    pub frozen_checksums: Vec<PhaseChecksums>,
    /// Validation metric at the end of each phase, by task name.
    pub phase_end_metric: BTreeMap<String, f64>,
    /// Validation metric of every task after the last phase.
    pub final_metric: BTreeMap<String, f64>,
}

impl TrainLog {
    /// `phase,epoch,task_loss,distill_loss,combined,metric`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("phase,epoch,task_loss,distill_loss,combined,metric\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{:.6}",
                r.phase, r.epoch, r.task_loss, r.distill_loss, r.combined, r.metric
            );
        }
        out
    }

    pub fn phase_records(&self, phase: Task) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(move |r| r.phase == phase)
    }
}

/// Freezes the two heads other than `active`. The backbone stays trainable.
pub fn freeze_heads<T: Scalar>(student: &mut Student<T>, active: Task) {
    let net = student.network_mut();
    for t in Task::ALL {
        net.set_frozen(t, t != active);
    }
}

/// Parses a task name and freezes the other heads.
pub fn freeze_heads_by_name<T: Scalar>(student: &mut Student<T>, active: &str) -> Result<()> {
    freeze_heads(student, Task::parse(active)?);
    Ok(())
}

fn frozen_checksums<T: Scalar>(net: &Network<T>) -> BTreeMap<String, String> {
    Task::ALL
        .iter()
        .filter(|&&t| net.is_frozen(t))
        .map(|&t| (Group::Head(t).label(), net.params().checksum(Group::Head(t))))
        .collect()
}

struct LossSetup<T> {
    alpha: T,
    temperature: T,
    mode: TargetMode,
}

#[derive(Clone, Copy, Default)]
struct LossParts {
    task: f64,
    distill: f64,
    combined: f64,
}

fn head_on_graph<T: Scalar>(net: &Network<T>, g: &mut Graph<T>, task: Task, ex: &Example<T>) -> Result<Var> {
    let x = net.image_input(g, &ex.image)?;
    let a = net.backbone_forward(g, x)?;
    match task {
        Task::Abnormality => net.class_logits(g, a),
        Task::Segmentation => net.mask_logits(g, a, x),
        Task::Report => Ok(net.caption_forced(g, a, report_io(&ex.report).0)?.0),
    }
}

fn binarize<T: Scalar>(z: &[T]) -> Vec<T> {
    z.iter().map(|&v| if v > T::zero() { T::one() } else { T::zero() }).collect()
}

fn task_part<T: Scalar>(task: Task, out: &[T], ex: &Example<T>, teacher: Option<&[T]>, mode: TargetMode, vocab: usize) -> Result<LossGrad<T>> {
    let literal = match (mode, teacher) {
        (TargetMode::Teacher, Some(t)) => Some(t),
        _ => None,
    };
    match task {
        Task::Abnormality => match literal {
            Some(t) => task_loss(task, out, TaskTarget::Labels(&binarize(t))),
            None => task_loss(task, out, TaskTarget::Labels(&ex.labels)),
        },
        Task::Segmentation => match literal {
            Some(t) => task_loss(task, out, TaskTarget::Mask(&binarize(t))),
            None => task_loss(task, out, TaskTarget::Mask(&ex.mask)),
        },
        Task::Report => match literal {
            Some(t) => {
                let targets: Vec<usize> = t.chunks(vocab).map(argmax).collect();
                task_loss(task, out, TaskTarget::Tokens { targets: &targets, vocab })
            }
            None => task_loss(task, out, TaskTarget::Tokens { targets: report_io(&ex.report).1, vocab }),
        },
    }
}

fn distill_part<T: Scalar>(task: Task, out: &[T], teacher: &[T], temperature: T, vocab: usize) -> Result<LossGrad<T>> {
    match task {
        Task::Report => distill_rows(out, teacher, vocab, temperature),
        _ => distill_binary(out, teacher, temperature),
    }
}

fn sample_grads<T: Scalar>(
    net: &Network<T>,
    task: Task,
    ex: &Example<T>,
    teacher: Option<&[T]>,
    setup: &LossSetup<T>,
) -> Result<(ParamGrads<T>, LossParts)> {
    let vocab = net.arch().vocab_size;
    let mut g = Graph::new();
    let out_var = head_on_graph(net, &mut g, task, ex)?;
    let out = g.value(out_var).data().to_vec();
    let tl = task_part(task, &out, ex, teacher, setup.mode, vocab)?;
    let (value, grad, distill) = match teacher {
        Some(t) => {
            let dl = distill_part(task, &out, t, setup.temperature, vocab)?;
            let a = setup.alpha;
            let grad = tl.grad.iter().zip(&dl.grad).map(|(&x, &y)| (T::one() - a) * x + a * y).collect();
            (combined_loss(tl.value, dl.value, a)?, grad, dl.value)
        }
        None => (tl.value, tl.grad, T::zero()),
    };
    if !value.is_finite() {
        return Err(Error::Training(format!("{task} loss became non-finite on sample {}", ex.index)));
    }
    let root = g.loss(out_var, value, grad)?;
    let grads = g.backward(root).param_grads(&g, net.params().len());
    Ok((grads, LossParts { task: tl.value.as_f64(), distill: distill.as_f64(), combined: value.as_f64() }))
}

/// Mean gradient over a batch, gathered in batch order.
fn batch_grads<T: Scalar>(
    net: &Network<T>,
    task: Task,
    batch: &[(&Example<T>, Option<&[T]>)],
    setup: &LossSetup<T>,
) -> Result<(ParamGrads<T>, LossParts)> {
    let per: Vec<(ParamGrads<T>, LossParts)> = batch
        .par_iter()
        .map(|(ex, t)| sample_grads(net, task, ex, *t, setup))
        .collect::<Result<_>>()?;
    let mut total: ParamGrads<T> = vec![None; net.params().len()];
    let mut parts = LossParts::default();
    for (grads, p) in per {
        for (acc, g) in total.iter_mut().zip(grads) {
            if let Some(g) = g {
                match acc {
                    Some(a) => a.add_assign(&g),
                    None => *acc = Some(g),
                }
            }
        }
        parts.task += p.task;
        parts.distill += p.distill;
        parts.combined += p.combined;
    }
    let inv = T::one() / T::from_usize_lossy(batch.len());
    for g in total.iter_mut().flatten() {
        g.scale_assign(inv);
    }
    Ok((total, parts))
}

fn epoch_order(n: usize, seed: u64, phase: usize, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(((phase as u64) << 32) | epoch as u64)));
    idx.shuffle(&mut rng);
    idx
}

fn require_nonempty<T>(train: &[&Example<T>], val: &[&Example<T>]) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Contract("training needs non-empty train and validation splits".into()));
    }
    Ok(())
}

/// Trains one single-head network on ground truth with Adam and returns the
/// epoch with the best validation metric.
pub fn train_teacher<T: Scalar>(
    task: Task,
    model: &ModelConfig,
    shape: ProblemShape,
    train: &[&Example<T>],
    val: &[&Example<T>],
    cfg: &TeacherConfig,
) -> Result<(Teacher<T>, TrainLog)> {
    cfg.validate()?;
    require_nonempty(train, val)?;
    let arch = ArchConfig::teacher(task, model, shape);
    let mut net = Network::<T>::new(arch, mix64(model.init_seed ^ (task as u64 + 1)))?;
    let mut adam = Adam::new(&net, T::lit(cfg.learning_rate));
    let setup = LossSetup { alpha: T::zero(), temperature: T::one(), mode: TargetMode::GroundTruth };
    let vocab = shape.vocab_size;
    let mut log = TrainLog::default();
    let mut best: Option<(f64, Network<T>)> = None;
    for epoch in 1..=cfg.epochs {
        let order = epoch_order(train.len(), cfg.seed ^ mix64(task as u64), 0, epoch);
        let mut sums = LossParts::default();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&Example<T>, Option<&[T]>)> = chunk.iter().map(|&i| (train[i], None)).collect();
            let (grads, parts) = batch_grads(&net, task, &batch, &setup)?;
            adam.step(&mut net, &grads)?;
            sums.task += parts.task;
            sums.combined += parts.combined;
        }
        let outputs = head_outputs(&net, task, val)?;
        let metric = task_metric(task, &outputs, val, vocab);
        let n = train.len() as f64;
        log.records.push(EpochRecord {
            phase: task,
            epoch,
            task_loss: sums.task / n,
            distill_loss: 0.0,
            combined: sums.combined / n,
            metric,
            val_distill_loss: 0.0,
        });
        if best.as_ref().map_or(true, |(b, _)| metric > *b) {
            best = Some((metric, net.clone()));
        }
    }
    let (metric, net) = best.expect("at least one epoch");
    log.phase_end_metric.insert(task.name().to_string(), metric);
    log.final_metric.insert(task.name().to_string(), metric);
    Ok((Teacher::new(net)?, log))
}

fn check_compatible<T: Scalar>(student: &Student<T>, teacher: &Teacher<T>) -> Result<()> {
    let (s, t) = (student.network().arch(), teacher.network().arch());
    for (field, a, b) in [
        ("image_size", s.image_size, t.image_size),
        ("n_classes", s.n_classes, t.n_classes),
        ("vocab_size", s.vocab_size, t.vocab_size),
    ] {
        if a != b {
            return Err(Error::config(
                field,
                format!("student has {a} but the {} teacher has {b}", teacher.task()),
            ));
        }
    }
    Ok(())
}

fn find_teacher<T: Scalar>(teachers: &[Teacher<T>], task: Task) -> Result<&Teacher<T>> {
    let mut it = teachers.iter().filter(|t| t.task() == task);
    match (it.next(), it.next()) {
        (Some(t), None) => Ok(t),
        (None, _) => Err(Error::config("teachers", format!("no {task} teacher"))),
        _ => Err(Error::config("teachers", format!("more than one {task} teacher"))),
    }
}

/// Runs one distillation phase: freeze the other heads, then `cfg.epochs`
/// epochs of SGD on the combined loss. `phase_index` only seeds shuffling.
pub fn run_phase<T: Scalar>(
    student: &mut Student<T>,
    teacher: &Teacher<T>,
    train: &[&Example<T>],
    val: &[&Example<T>],
    cfg: &DistillConfig,
    phase_index: usize,
    log: &mut TrainLog,
) -> Result<()> {
    cfg.validate()?;
    require_nonempty(train, val)?;
    check_compatible(student, teacher)?;
    let task = teacher.task();
    let vocab = student.network().arch().vocab_size;
    freeze_heads(student, task);
    let setup = LossSetup { alpha: T::lit(cfg.alpha), temperature: T::lit(cfg.temperature), mode: cfg.target_mode };

    // Teacher parameters never change, so their outputs are computed once.
    let teacher_train = head_outputs(teacher.network(), task, train)?;
    let teacher_val = head_outputs(teacher.network(), task, val)?;

    let mut proof = PhaseChecksums {
        phase: task,
        frozen: Task::ALL.iter().copied().filter(|&t| t != task).collect(),
        checkpoints: vec![frozen_checksums(student.network())],
    };
    let lr = T::lit(cfg.learning_rate);
    for epoch in 1..=cfg.epochs {
        let order = epoch_order(train.len(), cfg.seed, phase_index + 1, epoch);
        let mut sums = LossParts::default();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&Example<T>, Option<&[T]>)> =
                chunk.iter().map(|&i| (train[i], Some(teacher_train[i].as_slice()))).collect();
            let (grads, parts) = batch_grads(student.network(), task, &batch, &setup)?;
            sgd_step(student.network_mut(), &grads, lr)?;
            sums.task += parts.task;
            sums.distill += parts.distill;
            sums.combined += parts.combined;
        }
        let student_val = head_outputs(student.network(), task, val)?;
        let metric = agreement(task, &student_val, &teacher_val, vocab);
        let mut val_kl = 0.0;
        for (s, t) in student_val.iter().zip(&teacher_val) {
            val_kl += distill_part(task, s, t, setup.temperature, vocab)?.value.as_f64();
        }
        let n = train.len() as f64;
        log.records.push(EpochRecord {
            phase: task,
            epoch,
            task_loss: sums.task / n,
            distill_loss: sums.distill / n,
            combined: sums.combined / n,
            metric,
            val_distill_loss: val_kl / val.len() as f64,
        });
        proof.checkpoints.push(frozen_checksums(student.network()));
    }
    if !proof.constant() {
        return Err(Error::Training(format!("frozen heads changed during the {task} phase")));
    }
    let end = log.records.last().map_or(0.0, |r| r.metric);
    log.phase_end_metric.insert(task.name().to_string(), end);
    log.frozen_checksums.push(proof);
    Ok(())
}

/// Sequential multi-task distillation over `cfg.phase_order`.
pub fn distill_student<T: Scalar>(
    mut student: Student<T>,
    teachers: &[Teacher<T>],
    train: &[&Example<T>],
    val: &[&Example<T>],
    cfg: &DistillConfig,
) -> Result<(Student<T>, TrainLog)> {
    cfg.validate()?;
    for t in Task::ALL {
        check_compatible(&student, find_teacher(teachers, t)?)?;
    }
    let mut log = TrainLog::default();
    for (i, &task) in cfg.phase_order.iter().enumerate() {
        run_phase(&mut student, find_teacher(teachers, task)?, train, val, cfg, i, &mut log)?;
    }
    let vocab = student.network().arch().vocab_size;
    for t in Task::ALL {
        let teacher = find_teacher(teachers, t)?;
        let a = head_outputs(student.network(), t, val)?;
        let b = head_outputs(teacher.network(), t, val)?;
        log.final_metric.insert(t.name().to_string(), agreement(t, &a, &b, vocab));
    }
    Ok((student, log))
}

/// Student with every head unfrozen, built from the shared model settings.
pub fn new_student<T: Scalar>(model: &ModelConfig, shape: ProblemShape) -> Result<Student<T>> {
    Student::new(Network::new(ArchConfig::student(model, shape), mix64(model.init_seed ^ 0x5354))?)
}

/// Gradient of one sample's combined loss, exposed for descent checks.
pub fn combined_loss_and_grads<T: Scalar>(
    net: &Network<T>,
    task: Task,
    batch: &[(&Example<T>, Option<&[T]>)],
    alpha: T,
    temperature: T,
) -> Result<(T, Vec<Option<Tensor<T>>>)> {
    let setup = LossSetup { alpha, temperature, mode: TargetMode::GroundTruth };
    let (grads, parts) = batch_grads(net, task, batch, &setup)?;
    Ok((T::lit(parts.combined / batch.len() as f64), grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation_names_fields() {
        let mut c = DistillConfig::default();
        c.validate().unwrap();
        c.alpha = 1.5;
        assert!(matches!(c.validate(), Err(Error::Config { field, .. }) if field == "distill.alpha"));
        let c = DistillConfig { phase_order: vec![Task::Report, Task::Report, Task::Segmentation], ..Default::default() };
        assert!(matches!(c.validate(), Err(Error::Config { field, .. }) if field == "distill.phase_order"));
    }

    #[test]
    fn csv_has_the_documented_header() {
        let mut log = TrainLog::default();
        log.records.push(EpochRecord {
            phase: Task::Report,
            epoch: 1,
            task_loss: 0.5,
            distill_loss: 0.25,
            combined: 0.325,
            metric: 0.9,
            val_distill_loss: 0.2,
        });
        assert_eq!(
            log.to_csv(),
            "phase,epoch,task_loss,distill_loss,combined,metric\nreport,1,0.500000,0.250000,0.325000,0.900000\n"
        );
    }
}

//! Task metrics and student–teacher agreement.
//!
//! Head outputs are kept raw: class logits, per-pixel mask logits, and
//! teacher-forced `[L×V]` token logits. A logit `> 0` is a positive
//! decision (sigmoid threshold 0.5).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::data::io::Example;
use crate::distill::losses::Task;
use crate::error::Result;
use crate::models::Network;
use crate::scalar::Scalar;
use crate::tensor::argmax;

/// Teacher-forced decoder inputs and targets of a BOS…EOS report.
pub fn report_io(report: &[usize]) -> (&[usize], &[usize]) {
    (&report[..report.len() - 1], &report[1..])
}

/// Raw output of one head for one example.
pub fn head_output<T: Scalar>(net: &Network<T>, task: Task, ex: &Example<T>) -> Result<Vec<T>> {
    let mut g = Graph::new();
    let x = net.image_input(&mut g, &ex.image)?;
    let a = net.backbone_forward(&mut g, x)?;
    let out = match task {
        Task::Abnormality => net.class_logits(&mut g, a)?,
        Task::Segmentation => net.mask_logits(&mut g, a, x)?,
        Task::Report => net.caption_forced(&mut g, a, report_io(&ex.report).0)?.0,
    };
    Ok(g.value(out).data().to_vec())
}

/// Head outputs for many examples, in input order.
pub fn head_outputs<T: Scalar>(net: &Network<T>, task: Task, examples: &[&Example<T>]) -> Result<Vec<Vec<T>>> {
    examples.par_iter().map(|ex| head_output(net, task, ex)).collect()
}

fn positive<T: Scalar>(z: T) -> bool {
    z > T::zero()
}

/// Macro-averaged F1 over classes. A class with neither predicted nor true
/// positives scores 1.
pub fn macro_f1(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> f64 {
    let c = truth.first().map_or(0, Vec::len);
    if c == 0 {
        return 1.0;
    }
    let mut total = 0.0;
    for k in 0..c {
        let (mut tp, mut fp, mut fne) = (0usize, 0usize, 0usize);
        for (p, t) in pred.iter().zip(truth) {
            match (p[k], t[k]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fne += 1,
                _ => {}
            }
        }
        total += if tp + fp + fne == 0 { 1.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fne) as f64 };
    }
    total / c as f64
}

/// Hard Dice coefficient; two empty masks score 1.
pub fn dice_coefficient(pred: &[bool], truth: &[bool]) -> f64 {
    let inter = pred.iter().zip(truth).filter(|(&a, &b)| a && b).count();
    let total = pred.iter().filter(|&&a| a).count() + truth.iter().filter(|&&b| b).count();
    if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    }
}

/// Ground-truth quality of raw outputs: macro-F1, mean Dice, or teacher-forced
/// token accuracy.
pub fn task_metric<T: Scalar>(task: Task, outputs: &[Vec<T>], examples: &[&Example<T>], vocab: usize) -> f64 {
    match task {
        Task::Abnormality => {
            let pred: Vec<Vec<bool>> = outputs.iter().map(|z| z.iter().map(|&v| positive(v)).collect()).collect();
            let truth: Vec<Vec<bool>> = examples.iter().map(|e| e.labels.iter().map(|&l| l > T::lit(0.5)).collect()).collect();
            macro_f1(&pred, &truth)
        }
        Task::Segmentation => {
            let n = outputs.len().max(1) as f64;
            outputs
                .iter()
                .zip(examples)
                .map(|(z, e)| {
                    let p: Vec<bool> = z.iter().map(|&v| positive(v)).collect();
                    let t: Vec<bool> = e.mask.iter().map(|&m| m > T::lit(0.5)).collect();
                    dice_coefficient(&p, &t)
                })
                .sum::<f64>()
                / n
        }
        Task::Report => {
            let (mut hit, mut total) = (0usize, 0usize);
            for (z, e) in outputs.iter().zip(examples) {
                let targets = report_io(&e.report).1;
                for (row, &t) in z.chunks(vocab).zip(targets) {
                    if t == crate::distill::losses::PAD_ID {
                        continue;
                    }
                    total += 1;
                    hit += usize::from(argmax(row) == t);
                }
            }
            if total == 0 {
                1.0
            } else {
                hit as f64 / total as f64
            }
        }
    }
}

/// Agreement between two sets of raw outputs: thresholded-label match per
/// class, thresholded-mask match per pixel, or argmax match per token.
pub fn agreement<T: Scalar>(task: Task, a: &[Vec<T>], b: &[Vec<T>], vocab: usize) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for (x, y) in a.iter().zip(b) {
        match task {
            Task::Abnormality | Task::Segmentation => {
                for (&u, &v) in x.iter().zip(y) {
                    total += 1;
                    hit += usize::from(positive(u) == positive(v));
                }
            }
            Task::Report => {
                for (u, v) in x.chunks(vocab).zip(y.chunks(vocab)) {
                    total += 1;
                    hit += usize::from(argmax(u) == argmax(v));
                }
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        hit as f64 / total as f64
    }
}

/// Student and teacher quality plus their agreement for each task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: Task,
    /// Name of the ground-truth metric.
    pub metric: String,
    pub student: f64,
    pub teacher: f64,
    pub agreement: f64,
}

pub fn metric_name(task: Task) -> &'static str {
    match task {
        Task::Abnormality => "macro_f1",
        Task::Segmentation => "dice",
        Task::Report => "token_accuracy",
    }
}

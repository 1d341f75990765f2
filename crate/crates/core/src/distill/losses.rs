//! Task and distillation losses with their analytic input gradients.
//!
//! Every kernel returns the loss value and d(loss)/d(logits), so the same
//! code serves plain evaluation and the autograd tape.

use serde::{Deserialize, Serialize};

use super::softmax::{check_temperature, log_softened, softened};
use crate::error::{Error, Result};
use crate::scalar::{sigmoid, softplus, Scalar};

/// Reserved padding token id excluded by the masked caption loss.
pub const PAD_ID: usize = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Report,
    Abnormality,
    Segmentation,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Report, Task::Abnormality, Task::Segmentation];

    pub fn name(self) -> &'static str {
        match self {
            Task::Report => "report",
            Task::Abnormality => "abnormality",
            Task::Segmentation => "segmentation",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "report" => Ok(Task::Report),
            "abnormality" => Ok(Task::Abnormality),
            "segmentation" => Ok(Task::Segmentation),
            other => Err(Error::Domain(format!(
                "unknown task `{other}` (expected report, abnormality or segmentation)"
            ))),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad<T> {
    pub value: T,
    pub grad: Vec<T>,
    /// Number of terms that contributed (positions, classes or pixels).
    pub terms: usize,
}

/// Mean per-class binary cross-entropy on logits.
pub fn bce_with_logits<T: Scalar>(logits: &[T], targets: &[T]) -> Result<LossGrad<T>> {
    same_len(logits.len(), targets.len(), "classification logits vs labels")?;
    let n = T::from_usize_lossy(logits.len());
    let mut value = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(targets) {
        value += softplus(z) - z * y;
        grad.push((sigmoid(z) - y) / n);
    }
    Ok(LossGrad { value: value / n, grad, terms: logits.len() })
}

/// Soft DICE loss `1 − (2|P∩G| + ε)/(|P| + |G| + ε)` on sigmoid probabilities.
pub fn dice_loss<T: Scalar>(logits: &[T], mask: &[T], eps: T) -> Result<LossGrad<T>> {
    same_len(logits.len(), mask.len(), "mask logits vs ground-truth mask")?;
    let p: Vec<T> = logits.iter().map(|&z| sigmoid(z)).collect();
    let inter: T = p.iter().zip(mask).map(|(&a, &b)| a * b).sum();
    let total: T = p.iter().copied().sum::<T>() + mask.iter().copied().sum::<T>();
    let num = T::lit(2.0) * inter + eps;
    let den = total + eps;
    let value = T::one() - num / den;
    let grad = p
        .iter()
        .zip(mask)
        .map(|(&pi, &gi)| {
            let d_dp = -(T::lit(2.0) * gi * den - num) / (den * den);
            d_dp * pi * (T::one() - pi)
        })
        .collect();
    Ok(LossGrad { value, grad, terms: logits.len() })
}

/// Cross-entropy over `[positions × vocab]` logits, averaged over the
/// positions whose target is not [`PAD_ID`]. With no such position the loss
/// is zero and `terms == 0`.
pub fn masked_cross_entropy<T: Scalar>(logits: &[T], vocab: usize, targets: &[usize]) -> Result<LossGrad<T>> {
    same_len(logits.len(), targets.len() * vocab, "caption logits vs targets")?;
    let count = targets.iter().filter(|&&t| t != PAD_ID).count();
    let mut grad = vec![T::zero(); logits.len()];
    if count == 0 {
        return Ok(LossGrad { value: T::zero(), grad, terms: 0 });
    }
    let inv = T::one() / T::from_usize_lossy(count);
    let mut value = T::zero();
    for (pos, &target) in targets.iter().enumerate() {
        if target == PAD_ID {
            continue;
        }
        if target >= vocab {
            return Err(Error::Vocabulary(format!("target id {target} outside vocabulary of {vocab}")));
        }
        let row = &logits[pos * vocab..(pos + 1) * vocab];
        let logp = log_softened(row, T::one());
        value -= logp[target];
        for (k, g) in grad[pos * vocab..(pos + 1) * vocab].iter_mut().enumerate() {
            let onehot = if k == target { T::one() } else { T::zero() };
            *g = (logp[k].exp() - onehot) * inv;
        }
    }
    Ok(LossGrad { value: value * inv, grad, terms: count })
}

/// `T² · KL(softmax(teacher/T) ‖ softmax(student/T))` for one logit vector.
pub fn distillation_loss<T: Scalar>(student: &[T], teacher: &[T], temperature: T) -> Result<T> {
    Ok(distill_rows(student, teacher, student.len(), temperature)?.value)
}

/// Row-wise distillation loss averaged over `len / width` rows.
pub fn distill_rows<T: Scalar>(student: &[T], teacher: &[T], width: usize, temperature: T) -> Result<LossGrad<T>> {
    check_temperature(temperature)?;
    same_len(student.len(), teacher.len(), "student vs teacher logits")?;
    if width == 0 || student.len() % width != 0 {
        return Err(Error::Shape(format!("{} logits do not split into rows of {width}", student.len())));
    }
    let rows = student.len() / width;
    let inv_rows = T::one() / T::from_usize_lossy(rows);
    let t2 = temperature * temperature;
    let mut value = T::zero();
    let mut grad = Vec::with_capacity(student.len());
    for (s, t) in student.chunks(width).zip(teacher.chunks(width)) {
        let q = softened(t, temperature);
        let log_q = log_softened(t, temperature);
        let log_p = log_softened(s, temperature);
        let mut kl = T::zero();
        for k in 0..width {
            if q[k] > T::zero() {
                kl += q[k] * (log_q[k] - log_p[k]);
            }
        }
        value += kl.max(T::zero());
        for k in 0..width {
            grad.push(temperature * (log_p[k].exp() - q[k]) * inv_rows);
        }
    }
    Ok(LossGrad { value: t2 * value * inv_rows, grad, terms: rows })
}

/// Distillation of independent binary decisions: each logit `z` is treated as
/// the two-class vector `[z, 0]`, so `softmax([z,0]/T) = [σ(z/T), 1 − σ(z/T)]`.
/// Averaged over elements.
pub fn distill_binary<T: Scalar>(student: &[T], teacher: &[T], temperature: T) -> Result<LossGrad<T>> {
    check_temperature(temperature)?;
    same_len(student.len(), teacher.len(), "student vs teacher logits")?;
    let n = T::from_usize_lossy(student.len().max(1));
    let t2 = temperature * temperature;
    let mut value = T::zero();
    let mut grad = Vec::with_capacity(student.len());
    for (&s, &t) in student.iter().zip(teacher) {
        let (zs, zt) = (s / temperature, t / temperature);
        let q = sigmoid(zt);
        let p = sigmoid(zs);
        // KL = q(ln q − ln p) + (1−q)(ln(1−q) − ln(1−p)), with ln σ(x) = −softplus(−x)
        let kl = q * (softplus(-zs) - softplus(-zt)) + (T::one() - q) * (softplus(zs) - softplus(zt));
        value += kl.max(T::zero());
        grad.push(temperature * (p - q) / n);
    }
    Ok(LossGrad { value: t2 * value / n, grad, terms: student.len() })
}

/// `ℒ = (1 − α)·L_task + α·ℒ_distillation`
pub fn combined_loss<T: Scalar>(task: T, distill: T, alpha: T) -> Result<T> {
    check_alpha(alpha)?;
    Ok((T::one() - alpha) * task + alpha * distill)
}

pub(crate) fn check_alpha<T: Scalar>(alpha: T) -> Result<()> {
    if !(alpha >= T::zero() && alpha <= T::one()) {
        return Err(Error::Domain(format!("distillation weight must lie in [0,1], got {alpha}")));
    }
    Ok(())
}

/// Ground truth for [`task_loss`].
pub enum TaskTarget<'a, T> {
    Labels(&'a [T]),
    Mask(&'a [T]),
    Tokens { targets: &'a [usize], vocab: usize },
}

/// Smoothing constant of the DICE loss.
pub const DICE_EPS: f64 = 1.0;

/// Dispatches to the loss belonging to `task`.
pub fn task_loss<T: Scalar>(task: Task, output: &[T], target: TaskTarget<'_, T>) -> Result<LossGrad<T>> {
    match (task, target) {
        (Task::Abnormality, TaskTarget::Labels(y)) => bce_with_logits(output, y),
        (Task::Segmentation, TaskTarget::Mask(m)) => dice_loss(output, m, T::lit(DICE_EPS)),
        (Task::Report, TaskTarget::Tokens { targets, vocab }) => masked_cross_entropy(output, vocab, targets),
        (task, _) => Err(Error::Shape(format!("ground truth kind does not match task {task}"))),
    }
}

fn same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}

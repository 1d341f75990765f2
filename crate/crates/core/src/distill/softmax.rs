use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Class probabilities obtained from logits softened at temperature `T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftDistribution<T> {
    pub probabilities: Vec<T>,
    pub temperature: T,
}

impl<T: Scalar> SoftDistribution<T> {
    pub fn argmax(&self) -> usize {
        crate::tensor::argmax(&self.probabilities)
    }
}

pub(crate) fn check_temperature<T: Scalar>(temperature: T) -> Result<()> {
    if !(temperature > T::zero()) || !temperature.is_finite() {
        return Err(Error::Domain(format!("temperature must be positive and finite, got {temperature}")));
    }
    Ok(())
}

/// `p_i = exp(z_i / T) / Σ_j exp(z_j / T)`, evaluated after subtracting the
/// largest logit.
pub fn temperature_softmax<T: Scalar>(logits: &[T], temperature: T) -> Result<SoftDistribution<T>> {
    check_temperature(temperature)?;
    if logits.is_empty() {
        return Err(Error::Domain("softmax of an empty logit vector".into()));
    }
    if let Some(i) = logits.iter().position(|z| !z.is_finite()) {
        return Err(Error::Domain(format!("logit {i} is not finite")));
    }
    Ok(SoftDistribution {
        probabilities: softened(logits, temperature),
        temperature,
    })
}

/// Unchecked kernel shared by the loss functions.
pub(crate) fn softened<T: Scalar>(logits: &[T], temperature: T) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut p: Vec<T> = logits.iter().map(|&z| ((z - max) / temperature).exp()).collect();
    let sum: T = p.iter().copied().sum();
    for x in &mut p {
        *x /= sum;
    }
    p
}

/// `log p_i` at temperature `T`, via log-sum-exp.
pub(crate) fn log_softened<T: Scalar>(logits: &[T], temperature: T) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let scaled: Vec<T> = logits.iter().map(|&z| (z - max) / temperature).collect();
    let lse = scaled.iter().map(|&s| s.exp()).sum::<T>().ln();
    scaled.into_iter().map(|s| s - lse).collect()
}

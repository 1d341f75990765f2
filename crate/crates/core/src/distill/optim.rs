use crate::error::{Error, Result};
use crate::models::Network;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-parameter gradients in store order; `None` means "not on the tape".
pub type ParamGrads<T> = Vec<Option<Tensor<T>>>;

fn check_finite<T: Scalar>(net: &Network<T>, grads: &ParamGrads<T>) -> Result<()> {
    for (i, g) in grads.iter().enumerate() {
        if let Some(g) = g {
            if !g.all_finite() {
                return Err(Error::Training(format!(
                    "non-finite gradient for parameter {}",
                    net.params().get(i).name
                )));
            }
        }
    }
    Ok(())
}

/// `θ ← θ − η·∇θ` on trainable parameters. Nothing is updated unless every
/// gradient is finite.
pub fn sgd_step<T: Scalar>(net: &mut Network<T>, grads: &ParamGrads<T>, lr: T) -> Result<()> {
    if !(lr > T::zero()) || !lr.is_finite() {
        return Err(Error::Domain(format!("learning rate must be positive, got {lr}")));
    }
    if grads.len() != net.params().len() {
        return Err(Error::Shape(format!("{} gradients for {} parameters", grads.len(), net.params().len())));
    }
    check_finite(net, grads)?;
    for (i, g) in grads.iter().enumerate() {
        let Some(g) = g else { continue };
        if !net.trainable(net.params().get(i).group) {
            continue;
        }
        for (p, &d) in net.params_mut().value_mut(i).data_mut().iter_mut().zip(g.data()) {
            *p -= lr * d;
        }
    }
    Ok(())
}

/// Adam with bias correction, used for teacher training.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new<U: Scalar>(net: &Network<U>, lr: T) -> Self {
        let zeros: Vec<Vec<T>> = net.params().iter().map(|p| vec![T::zero(); p.value.len()]).collect();
        Self { lr, beta1: T::lit(0.9), beta2: T::lit(0.999), eps: T::lit(1e-8), step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, net: &mut Network<T>, grads: &ParamGrads<T>) -> Result<()> {
        check_finite(net, grads)?;
        self.step += 1;
        let c1 = T::one() - self.beta1.powi(self.step);
        let c2 = T::one() - self.beta2.powi(self.step);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            if !net.trainable(net.params().get(i).group) {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = net.params_mut().value_mut(i).data_mut();
            for j in 0..p.len() {
                let d = g.data()[j];
                m[j] = self.beta1 * m[j] + (T::one() - self.beta1) * d;
                v[j] = self.beta2 * v[j] + (T::one() - self.beta2) * d * d;
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                p[j] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

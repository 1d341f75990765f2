//! Scaled dot-product attention, `softmax(QKᵀ/√d_k)·V`.

use crate::autograd::{softmax_in_place, Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{gemm_nn, gemm_nt, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionInputs<T> {
    /// `n_q × d_k`
    pub q: Tensor<T>,
    /// `n_k × d_k`
    pub k: Tensor<T>,
    /// `n_k × d_v`
    pub v: Tensor<T>,
    pub d_k: usize,
}

/// Row-stochastic `n_q × n_k` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights<T> {
    pub weights: Tensor<T>,
}

impl<T: Scalar> AttentionWeights<T> {
    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        let (_, n) = self.weights.dims2();
        self.weights.data().chunks(n)
    }

    /// Largest `|Σ_j w_ij − 1|` over rows, or an error if any entry is negative.
    pub fn check(&self) -> Result<f64> {
        let mut worst = 0.0f64;
        for row in self.rows() {
            if row.iter().any(|&w| w < T::zero() || !w.is_finite()) {
                return Err(Error::Contract("attention weight is negative or non-finite".into()));
            }
            let s: f64 = row.iter().map(|w| w.as_f64()).sum();
            worst = worst.max((s - 1.0).abs());
        }
        Ok(worst)
    }
}

fn check_shapes<T: Scalar>(q: &[usize], k: &[usize], v: &[usize], d_k: usize) -> Result<()> {
    if d_k == 0 {
        return Err(Error::Domain("d_k must be positive".into()));
    }
    if q.len() != 2 || k.len() != 2 || v.len() != 2 {
        return Err(Error::Shape("attention operands must be matrices".into()));
    }
    if q[1] != d_k || k[1] != d_k {
        return Err(Error::Shape(format!("Q is {:?} and K is {:?}, expected {d_k} columns", q, k)));
    }
    if k[0] != v[0] {
        return Err(Error::Shape(format!("K has {} rows but V has {}", k[0], v[0])));
    }
    if k[0] == 0 {
        return Err(Error::Shape("attention needs at least one key".into()));
    }
    Ok(())
}

pub fn scaled_dot_attention<T: Scalar>(inp: &AttentionInputs<T>) -> Result<(Tensor<T>, AttentionWeights<T>)> {
    check_shapes::<T>(inp.q.shape(), inp.k.shape(), inp.v.shape(), inp.d_k)?;
    let (n_q, d_k) = inp.q.dims2();
    let (n_k, d_v) = inp.v.dims2();
    let mut scores = vec![T::zero(); n_q * n_k];
    gemm_nt(n_q, d_k, n_k, inp.q.data(), inp.k.data(), &mut scores);
    let scale = T::one() / T::from_usize_lossy(d_k).sqrt();
    for row in scores.chunks_mut(n_k) {
        for s in row.iter_mut() {
            *s *= scale;
        }
        softmax_in_place(row);
    }
    let mut out = vec![T::zero(); n_q * d_v];
    gemm_nn(n_q, n_k, d_v, &scores, inp.v.data(), &mut out);
    Ok((
        Tensor::from_vec(&[n_q, d_v], out)?,
        AttentionWeights { weights: Tensor::from_vec(&[n_q, n_k], scores)? },
    ))
}

/// Same operation recorded on a tape. Returns `(output, weights)`.
pub fn attention_on_graph<T: Scalar>(g: &mut Graph<T>, q: Var, k: Var, v: Var, d_k: usize) -> Result<(Var, Var)> {
    check_shapes::<T>(g.value(q).shape(), g.value(k).shape(), g.value(v).shape(), d_k)?;
    let kt = g.transpose(k);
    let s = g.matmul(q, kt)?;
    let s = g.scale(s, T::one() / T::from_usize_lossy(d_k).sqrt());
    let w = g.softmax_rows(s);
    let out = g.matmul(w, v)?;
    Ok((out, w))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(&[rows, cols], data).unwrap()
    }

    #[test]
    fn single_key_returns_its_value() {
        let inp = AttentionInputs { q: m(2, 2, vec![3.0, -1.0, 0.2, 7.0]), k: m(1, 2, vec![0.4, 0.9]), v: m(1, 3, vec![1.0, 2.0, 3.0]), d_k: 2 };
        let (out, w) = scaled_dot_attention(&inp).unwrap();
        assert_eq!(w.weights.data(), &[1.0, 1.0]);
        assert_eq!(out.data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn equal_scores_average_values() {
        let inp = AttentionInputs { q: m(1, 2, vec![0.0, 0.0]), k: m(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), v: m(3, 1, vec![1.0, 2.0, 6.0]), d_k: 2 };
        let (out, w) = scaled_dot_attention(&inp).unwrap();
        assert!(w.weights.data().iter().all(|&x| x == 1.0 / 3.0));
        assert!((out.data()[0] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn graph_and_direct_forms_agree() {
        let q = m(2, 3, vec![0.1, -0.4, 0.3, 0.8, 0.2, -0.6]);
        let k = m(4, 3, (0..12).map(|i| (i as f64 * 0.7).cos()).collect());
        let v = m(4, 2, (0..8).map(|i| (i as f64 * 1.3).sin()).collect());
        let (out, w) = scaled_dot_attention(&AttentionInputs { q: q.clone(), k: k.clone(), v: v.clone(), d_k: 3 }).unwrap();
        let mut g = Graph::new();
        let (qv, kv, vv) = (g.constant(q), g.constant(k), g.constant(v));
        let (o, wv) = attention_on_graph(&mut g, qv, kv, vv, 3).unwrap();
        for (a, b) in g.value(o).data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-14);
        }
        for (a, b) in g.value(wv).data().iter().zip(w.weights.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_key_dimension_is_a_domain_error() {
        let inp = AttentionInputs { q: m(1, 1, vec![0.0]), k: m(1, 1, vec![0.0]), v: m(1, 1, vec![0.0]), d_k: 0 };
        assert!(matches!(scaled_dot_attention(&inp), Err(Error::Domain(_))));
        let bad = AttentionInputs { q: m(1, 2, vec![0.0; 2]), k: m(2, 2, vec![0.0; 4]), v: m(3, 1, vec![0.0; 3]), d_k: 2 };
        assert!(matches!(scaled_dot_attention(&bad), Err(Error::Shape(_))));
    }
}

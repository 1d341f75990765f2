//! Reverse-mode automatic differentiation over a per-forward-pass tape.
//!
//! A [`Graph`] records every operation as a node holding its value. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and returns
//! the gradient of every node. Parameters enter the tape through
//! [`Graph::param`], and their gradients are gathered by parameter index.

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Scalar};
use crate::tensor::{argmax, bilinear_plane, bilinear_plane_adjoint, gemm_nn, gemm_nt, gemm_tn, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Geometry of a 3×3 convolution with padding 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub height: usize,
    pub width: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height - 1) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width - 1) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.in_ch * 9
    }
}

enum Op<T> {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    AddChannelBias(Var, Var),
    Scale(Var, T),
    OneMinus(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom, cols: Vec<T> },
    GlobalAvgPool(Var),
    GlobalMaxPool { x: Var, argmax: Vec<usize> },
    Standardize { x: Var, inv_std: T },
    Upsample { x: Var, channels: usize, from: (usize, usize), to: (usize, usize) },
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    EmbedRow(Var, usize),
    MeanRows(Var),
    Reshape(Var),
    /// Scalar produced by a fused loss kernel; holds d(loss)/d(input).
    Loss { input: Var, grad: Vec<T> },
    WeightedSum(Vec<(Var, T)>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::with_capacity(256) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, index: usize, t: &Tensor<T>) -> Var {
        self.push(t.clone(), Op::Param(index))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose2();
        self.push(out, Op::Transpose(a))
    }

    fn check_same(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).len() != self.value(b).len() {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_vec(va.shape(), data).expect("same length");
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "add")?;
        Ok(self.zip_with(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "sub")?;
        Ok(self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "mul")?;
        Ok(self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    /// `a[m×n] + bias[n]` broadcast over rows.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2();
        if self.value(bias).len() != n {
            return Err(Error::Shape(format!("row bias length {} for {m}×{n}", self.value(bias).len())));
        }
        let mut out = self.value(a).clone();
        let b = self.value(bias).data().to_vec();
        for row in out.data_mut().chunks_mut(n) {
            for (x, &bb) in row.iter_mut().zip(&b) {
                *x += bb;
            }
        }
        Ok(self.push(out, Op::AddRowBias(a, bias)))
    }

    /// `a[C × ...] + bias[C]` broadcast over the trailing dimensions.
    pub fn add_channel_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let c = self.value(a).shape()[0];
        if self.value(bias).len() != c {
            return Err(Error::Shape(format!("channel bias length {} for {c} channels", self.value(bias).len())));
        }
        let mut out = self.value(a).clone();
        let per = out.len() / c;
        let b = self.value(bias).data().to_vec();
        for (ch, plane) in out.data_mut().chunks_mut(per).enumerate() {
            for x in plane {
                *x += b[ch];
            }
        }
        Ok(self.push(out, Op::AddChannelBias(a, bias)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| T::one() - x);
        self.push(out, Op::OneMinus(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.tanh());
        self.push(out, Op::Tanh(a))
    }

    /// 3×3 convolution, padding 1. `x` is `[C,H,W]`, `w` is `[O, C·9]`,
    /// `b` is `[O]`; output is `[O,H',W']`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let [in_ch, height, width] = xs[..] else {
            return Err(Error::Shape(format!("conv input must be [C,H,W], got {xs:?}")));
        };
        let (out_ch, patch) = self.value(w).dims2();
        if patch != in_ch * 9 || self.value(b).len() != out_ch {
            return Err(Error::Shape(format!(
                "conv weight {:?} / bias {:?} incompatible with input {xs:?}",
                self.value(w).shape(),
                self.value(b).shape()
            )));
        }
        let geom = ConvGeom { in_ch, out_ch, height, width, stride };
        let cols = im2col(self.value(x).data(), &geom);
        let (oh, ow) = (geom.out_height(), geom.out_width());
        let p = oh * ow;
        let mut out = vec![T::zero(); out_ch * p];
        gemm_nn(out_ch, geom.patch_len(), p, self.value(w).data(), &cols, &mut out);
        let bias = self.value(b).data();
        for (o, plane) in out.chunks_mut(p).enumerate() {
            for v in plane {
                *v += bias[o];
            }
        }
        let out = Tensor::from_vec(&[out_ch, oh, ow], out)?;
        Ok(self.push(out, Op::Conv2d { x, w, b, geom, cols }))
    }

    /// `[C,H,W] → [C]`
    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let c = v.shape()[0];
        let per = v.len() / c;
        let inv = T::one() / T::from_usize_lossy(per);
        let data = v.data().chunks(per).map(|pl| pl.iter().copied().sum::<T>() * inv).collect();
        let out = Tensor::from_vec(&[c], data)?;
        Ok(self.push(out, Op::GlobalAvgPool(a)))
    }

    /// `[C,H,W] → [C]`, routing the gradient to the first maximal cell.
    pub fn global_max_pool(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let c = v.shape()[0];
        let per = v.len() / c;
        let mut data = Vec::with_capacity(c);
        let mut cells = Vec::with_capacity(c);
        for (ch, plane) in v.data().chunks(per).enumerate() {
            let k = argmax(plane);
            data.push(plane[k]);
            cells.push(ch * per + k);
        }
        let out = Tensor::from_vec(&[c], data)?;
        Ok(self.push(out, Op::GlobalMaxPool { x: a, argmax: cells }))
    }

    /// Whole-tensor standardisation `(x − mean) / sqrt(var + eps)`.
    pub fn standardize(&mut self, a: Var, eps: T) -> Var {
        let v = self.value(a);
        let n = T::from_usize_lossy(v.len());
        let mean = v.data().iter().copied().sum::<T>() / n;
        let var = v.data().iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
        let inv_std = T::one() / (var + eps).sqrt();
        let out = v.map(|x| (x - mean) * inv_std);
        self.push(out, Op::Standardize { x: a, inv_std })
    }

    /// Bilinear resampling of `[C,h,w]` to `[C,H,W]`.
    pub fn upsample(&mut self, a: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let s = self.value(a).shape().to_vec();
        let [c, h, w] = s[..] else {
            return Err(Error::Shape(format!("upsample input must be [C,H,W], got {s:?}")));
        };
        let mut data = Vec::with_capacity(c * out_h * out_w);
        for plane in self.value(a).data().chunks(h * w) {
            data.extend(bilinear_plane(plane, h, w, out_h, out_w));
        }
        let out = Tensor::from_vec(&[c, out_h, out_w], data)?;
        Ok(self.push(out, Op::Upsample { x: a, channels: c, from: (h, w), to: (out_h, out_w) }))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let (m, n) = v.dims2();
        let mut data = v.data().to_vec();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        let out = Tensor::from_vec(&[m, n], data).expect("same size");
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).dims2().0;
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).dims2().1).collect();
        for &p in parts {
            if self.value(p).dims2().0 != rows {
                return Err(Error::Shape("concat_cols row counts differ".into()));
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let out = Tensor::from_vec(&[rows, total], data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Stacks `[m_i×n]` blocks vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).dims2().1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (m, n) = self.value(p).dims2();
            if n != cols {
                return Err(Error::Shape("concat_rows column counts differ".into()));
            }
            rows += m;
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::from_vec(&[rows, cols], data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2();
        if start > end || end > n {
            return Err(Error::Shape(format!("slice {start}..{end} of {n} columns")));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(m * (end - start));
        for r in 0..m {
            data.extend_from_slice(&src[r * n + start..r * n + end]);
        }
        let out = Tensor::from_vec(&[m, end - start], data)?;
        Ok(self.push(out, Op::SliceCols(a, start, end)))
    }

    /// Row `row` of a `[V×e]` table as a `[1×e]` tensor.
    pub fn embed_row(&mut self, table: Var, row: usize) -> Result<Var> {
        let (v, e) = self.value(table).dims2();
        if row >= v {
            return Err(Error::Vocabulary(format!("token id {row} outside table of {v} rows")));
        }
        let data = self.value(table).data()[row * e..(row + 1) * e].to_vec();
        Ok(self.push(Tensor::row(data), Op::EmbedRow(table, row)))
    }

    /// `[m×n] → [1×n]`
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.value(a).dims2();
        let inv = T::one() / T::from_usize_lossy(m);
        let mut data = vec![T::zero(); n];
        for row in self.value(a).data().chunks(n) {
            for (d, &x) in data.iter_mut().zip(row) {
                *d += x;
            }
        }
        for d in &mut data {
            *d *= inv;
        }
        self.push(Tensor::row(data), Op::MeanRows(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    /// Records a scalar loss computed outside the tape together with its
    /// gradient with respect to `input`.
    pub fn loss(&mut self, input: Var, value: T, grad: Vec<T>) -> Result<Var> {
        if grad.len() != self.value(input).len() {
            return Err(Error::Shape("loss gradient length differs from input".into()));
        }
        Ok(self.push(Tensor::scalar(value), Op::Loss { input, grad }))
    }

    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Var {
        let total = terms.iter().map(|&(v, w)| self.scalar(v) * w).sum();
        self.push(Tensor::scalar(total), Op::WeightedSum(terms.to_vec()))
    }

    /// Gradients of the scalar node `root` with respect to every node.
    pub fn backward(&self, root: Var) -> Grads<T> {
        let n = root.0 + 1;
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        grads[root.0] = Some(Tensor::filled(self.value(root).shape(), T::one()));

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Grads { grads }
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                let (m, k) = va.dims2();
                let (_, n) = vb.dims2();
                let ga = acc(grads, *a, va);
                gemm_nt(m, n, k, gd, vb.data(), ga);
                let gb = acc(grads, *b, vb);
                gemm_tn(k, m, n, va.data(), gd, gb);
            }
            Op::Transpose(a) => {
                let (r, c) = node.value.dims2();
                let ga = acc(grads, *a, self.value(*a));
                for x in 0..r {
                    for y in 0..c {
                        ga[y * r + x] += gd[x * c + y];
                    }
                }
            }
            Op::Add(a, b) => {
                add_into(acc(grads, *a, self.value(*a)), gd);
                add_into(acc(grads, *b, self.value(*b)), gd);
            }
            Op::Sub(a, b) => {
                add_into(acc(grads, *a, self.value(*a)), gd);
                for (x, &y) in acc(grads, *b, self.value(*b)).iter_mut().zip(gd) {
                    *x -= y;
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                for ((x, &y), &bv) in acc(grads, *a, self.value(*a)).iter_mut().zip(gd).zip(vb) {
                    *x += y * bv;
                }
                for ((x, &y), &av) in acc(grads, *b, self.value(*b)).iter_mut().zip(gd).zip(va) {
                    *x += y * av;
                }
            }
            Op::AddRowBias(a, bias) => {
                add_into(acc(grads, *a, self.value(*a)), gd);
                let n = self.value(*bias).len();
                let gb = acc(grads, *bias, self.value(*bias));
                for row in gd.chunks(n) {
                    add_into(gb, row);
                }
            }
            Op::AddChannelBias(a, bias) => {
                add_into(acc(grads, *a, self.value(*a)), gd);
                let c = self.value(*bias).len();
                let per = gd.len() / c;
                let gb = acc(grads, *bias, self.value(*bias));
                for (ch, plane) in gd.chunks(per).enumerate() {
                    gb[ch] += plane.iter().copied().sum::<T>();
                }
            }
            Op::Scale(a, s) => {
                for (x, &y) in acc(grads, *a, self.value(*a)).iter_mut().zip(gd) {
                    *x += y * *s;
                }
            }
            Op::OneMinus(a) => {
                for (x, &y) in acc(grads, *a, self.value(*a)).iter_mut().zip(gd) {
                    *x -= y;
                }
            }
            Op::Relu(a) => {
                let out = node.value.data();
                for ((x, &y), &o) in acc(grads, *a, self.value(*a)).iter_mut().zip(gd).zip(out) {
                    if o > T::zero() {
                        *x += y;
                    }
                }
            }
            Op::Sigmoid(a) => {
                let out = node.value.data();
                for ((x, &y), &o) in acc(grads, *a, self.value(*a)).iter_mut().zip(gd).zip(out) {
                    *x += y * o * (T::one() - o);
                }
            }
            Op::Tanh(a) => {
                let out = node.value.data();
                for ((x, &y), &o) in acc(grads, *a, self.value(*a)).iter_mut().zip(gd).zip(out) {
                    *x += y * (T::one() - o * o);
                }
            }
            Op::Conv2d { x, w, b, geom, cols } => {
                let p = geom.out_height() * geom.out_width();
                let k = geom.patch_len();
                let gw = acc(grads, *w, self.value(*w));
                gemm_nt(geom.out_ch, p, k, gd, cols, gw);
                let gb = acc(grads, *b, self.value(*b));
                for (o, plane) in gd.chunks(p).enumerate() {
                    gb[o] += plane.iter().copied().sum::<T>();
                }
                let mut gcols = vec![T::zero(); k * p];
                gemm_tn(k, geom.out_ch, p, self.value(*w).data(), gd, &mut gcols);
                col2im(&gcols, geom, acc(grads, *x, self.value(*x)));
            }
            Op::GlobalAvgPool(a) => {
                let c = node.value.len();
                let va = self.value(*a);
                let per = va.len() / c;
                let inv = T::one() / T::from_usize_lossy(per);
                let ga = acc(grads, *a, va);
                for (ch, plane) in ga.chunks_mut(per).enumerate() {
                    let gv = gd[ch] * inv;
                    for x in plane {
                        *x += gv;
                    }
                }
            }
            Op::GlobalMaxPool { x, argmax } => {
                let ga = acc(grads, *x, self.value(*x));
                for (&k, &g) in argmax.iter().zip(gd) {
                    ga[k] += g;
                }
            }
            Op::Standardize { x, inv_std } => {
                let y = node.value.data();
                let n = T::from_usize_lossy(y.len());
                let mean_g = gd.iter().copied().sum::<T>() / n;
                let mean_gy = gd.iter().zip(y).map(|(&g, &v)| g * v).sum::<T>() / n;
                let ga = acc(grads, *x, self.value(*x));
                for ((d, &g), &v) in ga.iter_mut().zip(gd).zip(y) {
                    *d += *inv_std * (g - mean_g - v * mean_gy);
                }
            }
            Op::Upsample { x, channels, from, to } => {
                let ga = acc(grads, *x, self.value(*x));
                let (h, w) = *from;
                let (oh, ow) = *to;
                for c in 0..*channels {
                    bilinear_plane_adjoint(
                        &gd[c * oh * ow..(c + 1) * oh * ow],
                        h,
                        w,
                        oh,
                        ow,
                        &mut ga[c * h * w..(c + 1) * h * w],
                    );
                }
            }
            Op::SoftmaxRows(a) => {
                let (_, n) = node.value.dims2();
                let out = node.value.data();
                let ga = acc(grads, *a, self.value(*a));
                for ((grow, prow), dxrow) in gd.chunks(n).zip(out.chunks(n)).zip(ga.chunks_mut(n)) {
                    let dot: T = grow.iter().zip(prow).map(|(&g, &p)| g * p).sum();
                    for ((dx, &g), &p) in dxrow.iter_mut().zip(grow).zip(prow) {
                        *dx += p * (g - dot);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = node.value.dims2();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).dims2().1;
                    let gp = acc(grads, p, self.value(p));
                    for r in 0..rows {
                        add_into(&mut gp[r * w..(r + 1) * w], &gd[r * total + offset..r * total + offset + w]);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    add_into(acc(grads, p, self.value(p)), &gd[offset..offset + len]);
                    offset += len;
                }
            }
            Op::SliceCols(a, start, end) => {
                let (m, n) = self.value(*a).dims2();
                let w = end - start;
                let ga = acc(grads, *a, self.value(*a));
                for r in 0..m {
                    add_into(&mut ga[r * n + start..r * n + end], &gd[r * w..(r + 1) * w]);
                }
            }
            Op::EmbedRow(table, row) => {
                let e = node.value.len();
                let gt = acc(grads, *table, self.value(*table));
                add_into(&mut gt[row * e..(row + 1) * e], gd);
            }
            Op::MeanRows(a) => {
                let (m, n) = self.value(*a).dims2();
                let inv = T::one() / T::from_usize_lossy(m);
                let ga = acc(grads, *a, self.value(*a));
                for row in ga.chunks_mut(n) {
                    for (x, &y) in row.iter_mut().zip(gd) {
                        *x += y * inv;
                    }
                }
            }
            Op::Reshape(a) => {
                add_into(acc(grads, *a, self.value(*a)), gd);
            }
            Op::Loss { input, grad } => {
                let up = gd[0];
                for (x, &y) in acc(grads, *input, self.value(*input)).iter_mut().zip(grad) {
                    *x += up * y;
                }
            }
            Op::WeightedSum(terms) => {
                for &(v, wt) in terms {
                    acc(grads, v, self.value(v))[0] += gd[0] * wt;
                }
            }
        }
    }

    /// Parameter indices recorded on this tape, in insertion order.
    pub fn param_vars(&self) -> impl Iterator<Item = (Var, usize)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Param(p) => Some((Var(i), p)),
            _ => None,
        })
    }
}

fn acc<'a, T: Scalar>(grads: &'a mut [Option<Tensor<T>>], v: Var, like: &Tensor<T>) -> &'a mut [T] {
    grads[v.0]
        .get_or_insert_with(|| Tensor::zeros(like.shape()))
        .data_mut()
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Stable in-place softmax of one row.
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let (oh, ow) = (g.out_height(), g.out_width());
    let p = oh * ow;
    let mut cols = vec![T::zero(); g.patch_len() * p];
    for c in 0..g.in_ch {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (c * 9 + ky * 3 + kx) * p;
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - 1;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let dst = &mut cols[row + oy * ow..row + (oy + 1) * ow];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - 1;
                        if ix >= 0 && ix < g.width as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let p = oh * ow;
    for c in 0..g.in_ch {
        let plane = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (c * 9 + ky * 3 + kx) * p;
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - 1;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - 1;
                        if ix >= 0 && ix < g.width as isize {
                            plane[iy as usize * g.width + ix as usize] += cols[row + oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Result of [`Graph::backward`].
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Sums the gradients of every `Param` node into a per-parameter list.
    pub fn param_grads(&self, graph: &Graph<T>, n_params: usize) -> Vec<Option<Tensor<T>>> {
        let mut out: Vec<Option<Tensor<T>>> = (0..n_params).map(|_| None).collect();
        for (var, p) in graph.param_vars() {
            if let Some(g) = self.get(var) {
                match &mut out[p] {
                    Some(existing) => existing.add_assign(g),
                    slot => *slot = Some(g.clone()),
                }
            }
        }
        out
    }
}

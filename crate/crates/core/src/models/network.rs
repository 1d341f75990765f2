//! Convolutional backbone plus optional task heads.
//!
//! A teacher is a [`Network`] with one head; the student carries all three
//! heads on one shared backbone.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::attention::attention_on_graph;
use super::params::{Group, Init, ParamStore};
use crate::autograd::{Graph, Var};
use crate::data::vocab::{BOS, EOS};
use crate::distill::losses::Task;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{argmax, Tensor};

const NORM_EPS: f64 = 1e-5;

/// One 3×3, padding-1 convolution, whole-map standardisation, then ReLU. A
/// residual block adds its input before the ReLU and needs `stride == 1` and
/// matching channels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub channels: usize,
    pub stride: usize,
    #[serde(default)]
    pub residual: bool,
}

impl BlockSpec {
    pub const fn plain(channels: usize, stride: usize) -> Self {
        Self { channels, stride, residual: false }
    }

    pub const fn residual(channels: usize) -> Self {
        Self { channels, stride: 1, residual: true }
    }
}

/// Architecture hyperparameters shared by teachers and student.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub teacher_blocks: Vec<BlockSpec>,
    pub student_blocks: Vec<BlockSpec>,
    /// Initial scale of the student's backbone weights relative to the
    /// default fan-in init. Backbone blocks are invariant to weight scale, so
    /// under plain SGD a scale `s` divides the backbone's effective step by
    /// `s²` while heads keep the full step.
    pub student_backbone_scale: f64,
    /// Channels of the conv blocks each head owns on top of the backbone.
    pub head_channels: usize,
    /// Number of those blocks; all but the first are residual.
    pub head_depth: usize,
    /// Channels of the coarse segmentation branch.
    pub seg_hidden: usize,
    /// Channels of the full-resolution segmentation branch.
    pub seg_fine: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub key_dim: usize,
    pub value_dim: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            teacher_blocks: vec![
                BlockSpec::plain(8, 2),
                BlockSpec::residual(8),
                BlockSpec::plain(16, 2),
                BlockSpec::residual(16),
                BlockSpec::plain(24, 2),
                BlockSpec::residual(24),
                BlockSpec::residual(24),
            ],
            student_blocks: vec![BlockSpec::plain(12, 2), BlockSpec::plain(24, 2), BlockSpec::plain(32, 2)],
            student_backbone_scale: 32.0,
            head_channels: 32,
            head_depth: 1,
            seg_hidden: 8,
            seg_fine: 4,
            embed_dim: 16,
            hidden_dim: 64,
            key_dim: 16,
            value_dim: 24,
            init_seed: 7,
        }
    }
}

/// Fully resolved shape of one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub image_size: usize,
    pub blocks: Vec<BlockSpec>,
    pub backbone_init_scale: f64,
    pub heads: Vec<Task>,
    pub n_classes: usize,
    pub vocab_size: usize,
    pub max_report_len: usize,
    pub head_channels: usize,
    pub head_depth: usize,
    pub seg_hidden: usize,
    pub seg_fine: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub key_dim: usize,
    pub value_dim: usize,
}

/// Problem dimensions that come from the dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProblemShape {
    pub image_size: usize,
    pub n_classes: usize,
    pub vocab_size: usize,
    pub max_report_len: usize,
}

impl ArchConfig {
    fn from_parts(model: &ModelConfig, blocks: &[BlockSpec], scale: f64, heads: Vec<Task>, p: ProblemShape) -> Self {
        Self {
            image_size: p.image_size,
            blocks: blocks.to_vec(),
            backbone_init_scale: scale,
            heads,
            n_classes: p.n_classes,
            vocab_size: p.vocab_size,
            max_report_len: p.max_report_len,
            head_channels: model.head_channels,
            head_depth: model.head_depth,
            seg_hidden: model.seg_hidden,
            seg_fine: model.seg_fine,
            embed_dim: model.embed_dim,
            hidden_dim: model.hidden_dim,
            key_dim: model.key_dim,
            value_dim: model.value_dim,
        }
    }

    pub fn teacher(task: Task, model: &ModelConfig, p: ProblemShape) -> Self {
        Self::from_parts(model, &model.teacher_blocks, 1.0, vec![task], p)
    }

    pub fn student(model: &ModelConfig, p: ProblemShape) -> Self {
        Self::from_parts(model, &model.student_blocks, model.student_backbone_scale, Task::ALL.to_vec(), p)
    }

    pub fn feature_channels(&self) -> usize {
        self.blocks.last().map_or(1, |b| b.channels)
    }

    /// Spatial size of the last activation stack.
    pub fn grid(&self) -> (usize, usize) {
        let mut s = self.image_size;
        for b in &self.blocks {
            s = (s - 1) / b.stride + 1;
        }
        (s, s)
    }

    pub fn has_head(&self, task: Task) -> bool {
        self.heads.contains(&task)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::config("blocks", "backbone needs at least one block"));
        }
        let mut ch = 1;
        for (i, b) in self.blocks.iter().enumerate() {
            if b.channels == 0 || b.stride == 0 {
                return Err(Error::config("blocks", format!("block {i} has zero channels or stride")));
            }
            if b.residual && (b.stride != 1 || b.channels != ch) {
                return Err(Error::config("blocks", format!("residual block {i} must keep shape")));
            }
            ch = b.channels;
        }
        if !(self.backbone_init_scale > 0.0 && self.backbone_init_scale.is_finite()) {
            return Err(Error::config("student_backbone_scale", "must be positive and finite"));
        }
        let (h, w) = self.grid();
        if h < 4 || w < 4 {
            return Err(Error::config("blocks", format!("final grid {h}×{w} is smaller than 4×4")));
        }
        let mut seen = BTreeSet::new();
        if self.heads.is_empty() || !self.heads.iter().all(|t| seen.insert(*t)) {
            return Err(Error::config("heads", "heads must be a non-empty set"));
        }
        for (name, v) in [
            ("n_classes", self.n_classes),
            ("head_channels", self.head_channels),
            ("seg_hidden", self.seg_hidden),
            ("seg_fine", self.seg_fine),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("key_dim", self.key_dim),
            ("value_dim", self.value_dim),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if self.vocab_size <= EOS {
            return Err(Error::config("vocab_size", "vocabulary lacks reserved tokens"));
        }
        if self.max_report_len < 2 {
            return Err(Error::config("max_report_len", "must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct ConvBlock {
    w: usize,
    channels: usize,
    stride: usize,
    residual: bool,
}

#[derive(Clone, Debug)]
struct ClassHead {
    adapter: Vec<usize>,
    w: usize,
    b: usize,
}

#[derive(Clone, Debug)]
struct SegHead {
    adapter: Vec<usize>,
    w1: usize,
    b1: usize,
    wf: usize,
    bf: usize,
    w2: usize,
    b2: usize,
}

#[derive(Clone, Debug)]
struct CaptionHead {
    adapter: Vec<usize>,
    embed: usize,
    wk: usize,
    wv: usize,
    wq: usize,
    wh0: usize,
    bh0: usize,
    wzr: usize,
    bzr: usize,
    wxn: usize,
    un: usize,
    bn: usize,
    wo: usize,
    bo: usize,
}

/// Tape handles for one captioning pass over one image.
pub struct CaptionState {
    keys: Var,
    values: Var,
    h0: Var,
    embed: Var,
    wq: Var,
    wzr: Var,
    bzr: Var,
    wxn: Var,
    un: Var,
    bn: Var,
    wo: Var,
    bo: Var,
}

impl CaptionState {
    pub fn initial_hidden(&self) -> Var {
        self.h0
    }
}

/// One decoder step: vocabulary logits `[1×V]`, next hidden state, and the
/// attention row over the backbone grid `[1×P]`.
pub struct StepOut {
    pub logits: Var,
    pub hidden: Var,
    pub attention: Var,
}

pub struct Network<T> {
    arch: ArchConfig,
    params: ParamStore<T>,
    blocks: Vec<ConvBlock>,
    classifier: Option<ClassHead>,
    segmenter: Option<SegHead>,
    captioner: Option<CaptionHead>,
    frozen: BTreeSet<Task>,
    backbone_calls: AtomicUsize,
}

impl<T: Clone> Clone for Network<T> {
    fn clone(&self) -> Self {
        Self {
            arch: self.arch.clone(),
            params: self.params.clone(),
            blocks: self.blocks.clone(),
            classifier: self.classifier.clone(),
            segmenter: self.segmenter.clone(),
            captioner: self.captioner.clone(),
            frozen: self.frozen.clone(),
            backbone_calls: AtomicUsize::new(self.backbone_calls.load(Ordering::Relaxed)),
        }
    }
}

impl<T> std::fmt::Debug for Network<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Network")
            .field("heads", &self.arch.heads)
            .field("blocks", &self.arch.blocks.len())
            .finish()
    }
}

const CONV_GAIN: f64 = 6.0;
const LINEAR_GAIN: f64 = 3.0;

impl<T: Scalar> Network<T> {
    /// Builds a freshly initialized network. Parameter values depend only on
    /// `seed` and parameter names.
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut p = ParamStore::new();
        let bb = Group::Backbone;
        let mut blocks = Vec::new();
        let mut in_ch = 1;
        let bb_gain = CONV_GAIN * arch.backbone_init_scale * arch.backbone_init_scale;
        for (i, block) in arch.blocks.iter().enumerate() {
            let fan = in_ch * 9;
            let w = p.add(&format!("backbone.conv{i}.w"), bb, &[block.channels, fan], Init::FanIn { fan_in: fan, gain: bb_gain }, seed);
            blocks.push(ConvBlock { w, channels: block.channels, stride: block.stride, residual: block.residual });
            in_ch = block.channels;
        }
        let a_fan = in_ch * 9;
        let k = arch.head_channels;
        let depth = arch.head_depth;
        let adapter = |p: &mut ParamStore<T>, name: &str, g: Group| {
            (0..depth)
                .map(|i| {
                    let fan = if i == 0 { a_fan } else { k * 9 };
                    p.add(&format!("{name}.adapter{i}.w"), g, &[k, fan], Init::FanIn { fan_in: fan, gain: CONV_GAIN }, seed)
                })
                .collect::<Vec<_>>()
        };
        let lin = |fan_in: usize| Init::FanIn { fan_in, gain: LINEAR_GAIN };

        let classifier = arch.has_head(Task::Abnormality).then(|| {
            let g = Group::Head(Task::Abnormality);
            ClassHead {
                adapter: adapter(&mut p, "abnormality", g),
                w: p.add("abnormality.w", g, &[2 * k, arch.n_classes], Init::Zeros, seed),
                b: p.add("abnormality.b", g, &[arch.n_classes], Init::Zeros, seed),
            }
        });

        let segmenter = arch.has_head(Task::Segmentation).then(|| {
            let g = Group::Head(Task::Segmentation);
            let (m, f) = (arch.seg_hidden, arch.seg_fine);
            SegHead {
                adapter: adapter(&mut p, "segmentation", g),
                w1: p.add("segmentation.coarse.w", g, &[m, k], Init::FanIn { fan_in: k, gain: CONV_GAIN }, seed),
                b1: p.add("segmentation.coarse.b", g, &[m], Init::Zeros, seed),
                wf: p.add("segmentation.fine.w", g, &[f, 9], Init::FanIn { fan_in: 9, gain: CONV_GAIN }, seed),
                bf: p.add("segmentation.fine.b", g, &[f], Init::Zeros, seed),
                w2: p.add("segmentation.out.w", g, &[1, m + f], Init::Zeros, seed),
                b2: p.add("segmentation.out.b", g, &[1], Init::Zeros, seed),
            }
        });

        let captioner = arch.has_head(Task::Report).then(|| {
            let g = Group::Head(Task::Report);
            let (v, e, h) = (arch.vocab_size, arch.embed_dim, arch.hidden_dim);
            let (dk, dv) = (arch.key_dim, arch.value_dim);
            let f = k + 2;
            CaptionHead {
                adapter: adapter(&mut p, "report", g),
                embed: p.add("report.embed", g, &[v, e], lin(1), seed),
                wk: p.add("report.key.w", g, &[f, dk], lin(f), seed),
                wv: p.add("report.value.w", g, &[f, dv], lin(f), seed),
                wq: p.add("report.query.w", g, &[h, dk], lin(h), seed),
                wh0: p.add("report.init.w", g, &[f + k, h], lin(f + k), seed),
                bh0: p.add("report.init.b", g, &[h], Init::Zeros, seed),
                wzr: p.add("report.gates.w", g, &[e + dv + h, 2 * h], lin(e + dv + h), seed),
                bzr: p.add("report.gates.b", g, &[2 * h], Init::Zeros, seed),
                wxn: p.add("report.cand.w", g, &[e + dv, h], lin(e + dv), seed),
                un: p.add("report.cand.u", g, &[h, h], lin(h), seed),
                bn: p.add("report.cand.b", g, &[h], Init::Zeros, seed),
                wo: p.add("report.out.w", g, &[h + dv, v], Init::Zeros, seed),
                bo: p.add("report.out.b", g, &[v], Init::Zeros, seed),
            }
        });

        Ok(Self {
            arch,
            params: p,
            blocks,
            classifier,
            segmenter,
            captioner,
            frozen: BTreeSet::new(),
            backbone_calls: AtomicUsize::new(0),
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            arch: self.arch.clone(),
            params: self.params.cast(),
            blocks: self.blocks.clone(),
            classifier: self.classifier.clone(),
            segmenter: self.segmenter.clone(),
            captioner: self.captioner.clone(),
            frozen: self.frozen.clone(),
            backbone_calls: AtomicUsize::new(0),
        }
    }

    pub fn is_frozen(&self, task: Task) -> bool {
        self.frozen.contains(&task)
    }

    pub fn set_frozen(&mut self, task: Task, frozen: bool) {
        if frozen {
            self.frozen.insert(task);
        } else {
            self.frozen.remove(&task);
        }
    }

    /// Whether parameters of `group` may be updated.
    pub fn trainable(&self, group: Group) -> bool {
        match group {
            Group::Backbone => true,
            Group::Head(t) => !self.is_frozen(t),
        }
    }

    /// Number of backbone evaluations since construction or the last reset.
    pub fn backbone_calls(&self) -> usize {
        self.backbone_calls.load(Ordering::Relaxed)
    }

    pub fn reset_backbone_calls(&self) {
        self.backbone_calls.store(0, Ordering::Relaxed);
    }

    fn p(&self, g: &mut Graph<T>, idx: usize) -> Var {
        g.param(idx, self.params.value(idx))
    }

    fn require(&self, task: Task) -> Result<()> {
        if self.arch.has_head(task) {
            Ok(())
        } else {
            Err(Error::Contract(format!("network has no {task} head")))
        }
    }

    /// Puts a `[1, S, S]` image on the tape after checking its size.
    pub fn image_input(&self, g: &mut Graph<T>, image: &Tensor<T>) -> Result<Var> {
        let s = self.arch.image_size;
        if image.shape() != [1, s, s] {
            return Err(Error::Shape(format!("expected a [1, {s}, {s}] image, got {:?}", image.shape())));
        }
        Ok(g.constant(image.clone()))
    }

    /// Bias-free 3×3 conv, whole-map standardisation, optional residual
    /// add, ReLU. Standardising makes the block invariant to the scale of
    /// its weights, so a bias would only duplicate the mean removal.
    fn conv_unit(&self, g: &mut Graph<T>, x: Var, w: usize, channels: usize, stride: usize, residual: bool) -> Result<Var> {
        let w = self.p(g, w);
        let b = g.constant(Tensor::zeros(&[channels]));
        let mut y = g.conv2d(x, w, b, stride)?;
        y = g.standardize(y, T::lit(NORM_EPS));
        if residual {
            y = g.add(y, x)?;
        }
        Ok(g.relu(y))
    }

    fn adapt(&self, g: &mut Graph<T>, adapter: &[usize], mut x: Var) -> Result<Var> {
        for (i, &w) in adapter.iter().enumerate() {
            x = self.conv_unit(g, x, w, self.arch.head_channels, 1, i > 0)?;
        }
        Ok(x)
    }

    /// Final activation stack `A`, shape `[K, h, w]`.
    pub fn backbone_forward(&self, g: &mut Graph<T>, image: Var) -> Result<Var> {
        self.backbone_calls.fetch_add(1, Ordering::Relaxed);
        let mut x = image;
        for blk in &self.blocks {
            x = self.conv_unit(g, x, blk.w, blk.channels, blk.stride, blk.residual)?;
        }
        Ok(x)
    }

    /// Class logits `[1×C]` from average- and max-pooled features.
    pub fn class_logits(&self, g: &mut Graph<T>, acts: Var) -> Result<Var> {
        let feats = self.class_features(g, acts)?;
        self.class_logits_from_features(g, feats)
    }

    /// The classifier's own conv stack on top of the backbone, `[K', h, w]`.
    pub fn class_features(&self, g: &mut Graph<T>, acts: Var) -> Result<Var> {
        self.require(Task::Abnormality)?;
        let head = self.classifier.as_ref().expect("head present");
        self.adapt(g, &head.adapter, acts)
    }

    pub fn class_logits_from_features(&self, g: &mut Graph<T>, feats: Var) -> Result<Var> {
        self.require(Task::Abnormality)?;
        let head = self.classifier.as_ref().expect("head present");
        let k = g.value(feats).shape()[0];
        let avg = g.global_avg_pool(feats)?;
        let avg = g.reshape(avg, &[1, k])?;
        let max = g.global_max_pool(feats)?;
        let max = g.reshape(max, &[1, k])?;
        let pooled = g.concat_cols(&[avg, max])?;
        let w = self.p(g, head.w);
        let b = self.p(g, head.b);
        let z = g.matmul(pooled, w)?;
        g.add_row_bias(z, b)
    }

    /// Per-pixel mask logits `[1×(S·S)]` aligned with the input image.
    pub fn mask_logits(&self, g: &mut Graph<T>, acts: Var, image: Var) -> Result<Var> {
        self.require(Task::Segmentation)?;
        let head = self.segmenter.as_ref().expect("head present");
        let acts = self.adapt(g, &head.adapter, acts)?;
        let shape = g.value(acts).shape().to_vec();
        let (k, h, w) = (shape[0], shape[1], shape[2]);
        let s = self.arch.image_size;
        let (m, f) = (self.arch.seg_hidden, self.arch.seg_fine);

        let flat = g.reshape(acts, &[k, h * w])?;
        let w1 = self.p(g, head.w1);
        let b1 = self.p(g, head.b1);
        let coarse = g.matmul(w1, flat)?;
        let coarse = g.add_channel_bias(coarse, b1)?;
        let coarse = g.relu(coarse);
        let coarse = g.reshape(coarse, &[m, h, w])?;
        let coarse = g.upsample(coarse, s, s)?;
        let coarse = g.reshape(coarse, &[m, s * s])?;

        let wf = self.p(g, head.wf);
        let bf = self.p(g, head.bf);
        let fine = g.conv2d(image, wf, bf, 1)?;
        let fine = g.relu(fine);
        let fine = g.reshape(fine, &[f, s * s])?;

        let both = g.concat_rows(&[coarse, fine])?;
        let w2 = self.p(g, head.w2);
        let b2 = self.p(g, head.b2);
        let out = g.matmul(w2, both)?;
        g.add_channel_bias(out, b2)
    }

    /// Keys, values and initial state from the activation stack. Two
    /// coordinate channels are appended so attention can tell positions apart.
    pub fn caption_prepare(&self, g: &mut Graph<T>, acts: Var) -> Result<CaptionState> {
        self.require(Task::Report)?;
        let head = self.captioner.as_ref().expect("head present");
        let acts = self.adapt(g, &head.adapter, acts)?;
        let shape = g.value(acts).shape().to_vec();
        let (k, h, w) = (shape[0], shape[1], shape[2]);
        let flat = g.reshape(acts, &[k, h * w])?;
        let cells = g.transpose(flat);
        let coords = g.constant(grid_coordinates(h, w));
        let feats = g.concat_cols(&[cells, coords])?;

        let wk = self.p(g, head.wk);
        let wv = self.p(g, head.wv);
        let keys = g.matmul(feats, wk)?;
        let values = g.matmul(feats, wv)?;
        let mean = g.mean_rows(feats);
        let max = g.global_max_pool(acts)?;
        let max = g.reshape(max, &[1, k])?;
        let pooled = g.concat_cols(&[mean, max])?;
        let wh0 = self.p(g, head.wh0);
        let bh0 = self.p(g, head.bh0);
        let h0 = g.matmul(pooled, wh0)?;
        let h0 = g.add_row_bias(h0, bh0)?;
        let h0 = g.tanh(h0);
        Ok(CaptionState {
            keys,
            values,
            h0,
            embed: self.p(g, head.embed),
            wq: self.p(g, head.wq),
            wzr: self.p(g, head.wzr),
            bzr: self.p(g, head.bzr),
            wxn: self.p(g, head.wxn),
            un: self.p(g, head.un),
            bn: self.p(g, head.bn),
            wo: self.p(g, head.wo),
            bo: self.p(g, head.bo),
        })
    }

    /// One gated recurrent step with attention queried by the previous state.
    pub fn caption_step(&self, g: &mut Graph<T>, st: &CaptionState, token: usize, hidden: Var) -> Result<StepOut> {
        let hd = self.arch.hidden_dim;
        let q = g.matmul(hidden, st.wq)?;
        let (ctx, attention) = attention_on_graph(g, q, st.keys, st.values, self.arch.key_dim)?;
        let x = g.embed_row(st.embed, token)?;
        let xc = g.concat_cols(&[x, ctx])?;
        let xch = g.concat_cols(&[xc, hidden])?;
        let zr = g.matmul(xch, st.wzr)?;
        let zr = g.add_row_bias(zr, st.bzr)?;
        let zr = g.sigmoid(zr);
        let z = g.slice_cols(zr, 0, hd)?;
        let r = g.slice_cols(zr, hd, 2 * hd)?;
        let rh = g.mul(r, hidden)?;
        let a = g.matmul(xc, st.wxn)?;
        let b = g.matmul(rh, st.un)?;
        let n = g.add(a, b)?;
        let n = g.add_row_bias(n, st.bn)?;
        let n = g.tanh(n);
        let d = g.sub(hidden, n)?;
        let zd = g.mul(z, d)?;
        let next = g.add(n, zd)?;
        let out_in = g.concat_cols(&[next, ctx])?;
        let logits = g.matmul(out_in, st.wo)?;
        let logits = g.add_row_bias(logits, st.bo)?;
        Ok(StepOut { logits, hidden: next, attention })
    }

    /// Teacher-forced decoding: logits `[L×V]` (one row per input token) and
    /// the attention row of every step.
    pub fn caption_forced(&self, g: &mut Graph<T>, acts: Var, tokens: &[usize]) -> Result<(Var, Vec<Var>)> {
        self.check_forced_tokens(tokens)?;
        let st = self.caption_prepare(g, acts)?;
        let mut h = st.initial_hidden();
        let mut rows = Vec::with_capacity(tokens.len());
        let mut attn = Vec::with_capacity(tokens.len());
        for &t in tokens {
            let step = self.caption_step(g, &st, t, h)?;
            rows.push(step.logits);
            attn.push(step.attention);
            h = step.hidden;
        }
        Ok((g.concat_rows(&rows)?, attn))
    }

    fn check_forced_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.first() != Some(&BOS) {
            return Err(Error::Contract("teacher-forced tokens must start with BOS".into()));
        }
        if tokens.len() > self.arch.max_report_len {
            return Err(Error::Contract(format!(
                "{} tokens exceed max_report_len {}",
                tokens.len(),
                self.arch.max_report_len
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.arch.vocab_size) {
            return Err(Error::Vocabulary(format!("token id {bad} outside vocabulary of {}", self.arch.vocab_size)));
        }
        Ok(())
    }

    /// Greedy decoding on an existing tape from prepared state.
    pub fn decode_on_graph(&self, g: &mut Graph<T>, acts: Var, max_len: usize) -> Result<(Vec<usize>, Vec<Vec<T>>)> {
        let st = self.caption_prepare(g, acts)?;
        let mut h = st.initial_hidden();
        let mut token = BOS;
        let mut tokens = Vec::new();
        let mut attention = Vec::new();
        while tokens.len() + 1 < max_len {
            let step = self.caption_step(g, &st, token, h)?;
            token = argmax(g.value(step.logits).data());
            tokens.push(token);
            attention.push(g.value(step.attention).data().to_vec());
            h = step.hidden;
            if token == EOS {
                break;
            }
        }
        Ok((tokens, attention))
    }
}

/// `[P×2]` cell-centre coordinates in `[-1, 1]`, row-major over the grid.
fn grid_coordinates<T: Scalar>(h: usize, w: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(h * w * 2);
    for y in 0..h {
        for x in 0..w {
            data.push(T::lit((x as f64 + 0.5) / w as f64 * 2.0 - 1.0));
            data.push(T::lit((y as f64 + 0.5) / h as f64 * 2.0 - 1.0));
        }
    }
    Tensor::from_vec(&[h * w, 2], data).expect("grid size")
}

/// Single-task network. Parameters are fixed once constructed.
#[derive(Clone, Debug)]
pub struct Teacher<T> {
    net: Network<T>,
}

impl<T: Scalar> Teacher<T> {
    pub fn new(net: Network<T>) -> Result<Self> {
        if net.arch.heads.len() != 1 {
            return Err(Error::Contract(format!("a teacher has one head, got {:?}", net.arch.heads)));
        }
        Ok(Self { net })
    }

    pub fn task(&self) -> Task {
        self.net.arch.heads[0]
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }

    pub fn cast<U: Scalar>(&self) -> Teacher<U> {
        Teacher { net: self.net.cast() }
    }
}

/// Shared backbone with report, abnormality and segmentation heads.
#[derive(Clone, Debug)]
pub struct Student<T> {
    net: Network<T>,
}

impl<T: Scalar> Student<T> {
    pub fn new(net: Network<T>) -> Result<Self> {
        if !Task::ALL.iter().all(|&t| net.arch.has_head(t)) || net.arch.heads.len() != 3 {
            return Err(Error::Contract("a student has exactly three heads".into()));
        }
        Ok(Self { net })
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network<T> {
        &mut self.net
    }

    pub fn into_network(self) -> Network<T> {
        self.net
    }

    pub fn cast<U: Scalar>(&self) -> Student<U> {
        Student { net: self.net.cast() }
    }
}

/// Everything the student predicts for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiTaskOutput<T> {
    pub class_logits: Vec<T>,
    /// Row-major `S × S`.
    pub mask_logits: Vec<T>,
    pub image_size: usize,
    /// Generated tokens after BOS, EOS included when produced.
    pub tokens: Vec<usize>,
    /// One row-stochastic map over the backbone grid per generated token.
    pub step_attention: Vec<Vec<T>>,
    pub attention_grid: (usize, usize),
}

pub fn forward_classifier<T: Scalar>(net: &Network<T>, image: &Tensor<T>) -> Result<Vec<T>> {
    net.require(Task::Abnormality)?;
    let mut g = Graph::new();
    let x = net.image_input(&mut g, image)?;
    let a = net.backbone_forward(&mut g, x)?;
    let z = net.class_logits(&mut g, a)?;
    Ok(g.value(z).data().to_vec())
}

pub fn forward_segmenter<T: Scalar>(net: &Network<T>, image: &Tensor<T>) -> Result<Vec<T>> {
    net.require(Task::Segmentation)?;
    let mut g = Graph::new();
    let x = net.image_input(&mut g, image)?;
    let a = net.backbone_forward(&mut g, x)?;
    let z = net.mask_logits(&mut g, a, x)?;
    Ok(g.value(z).data().to_vec())
}

/// Per-position logits `[L×V]` and per-step attention rows under teacher forcing.
pub fn forward_captioner<T: Scalar>(net: &Network<T>, image: &Tensor<T>, tokens: &[usize]) -> Result<(Tensor<T>, Vec<Vec<T>>)> {
    net.require(Task::Report)?;
    net.check_forced_tokens(tokens)?;
    let mut g = Graph::new();
    let x = net.image_input(&mut g, image)?;
    let a = net.backbone_forward(&mut g, x)?;
    let (logits, attn) = net.caption_forced(&mut g, a, tokens)?;
    let rows = attn.iter().map(|&v| g.value(v).data().to_vec()).collect();
    Ok((g.value(logits).clone(), rows))
}

pub fn greedy_decode<T: Scalar>(net: &Network<T>, image: &Tensor<T>, max_len: usize) -> Result<(Vec<usize>, Vec<Vec<T>>)> {
    net.require(Task::Report)?;
    let mut g = Graph::new();
    let x = net.image_input(&mut g, image)?;
    let a = net.backbone_forward(&mut g, x)?;
    net.decode_on_graph(&mut g, a, max_len)
}

/// All three heads from a single backbone pass.
pub fn student_forward<T: Scalar>(student: &Student<T>, image: &Tensor<T>) -> Result<MultiTaskOutput<T>> {
    let net = &student.net;
    let mut g = Graph::new();
    let x = net.image_input(&mut g, image)?;
    let a = net.backbone_forward(&mut g, x)?;
    let grid = {
        let s = g.value(a).shape();
        (s[1], s[2])
    };
    let z = net.class_logits(&mut g, a)?;
    let m = net.mask_logits(&mut g, a, x)?;
    let (tokens, step_attention) = net.decode_on_graph(&mut g, a, net.arch.max_report_len)?;
    Ok(MultiTaskOutput {
        class_logits: g.value(z).data().to_vec(),
        mask_logits: g.value(m).data().to_vec(),
        image_size: net.arch.image_size,
        tokens,
        step_attention,
        attention_grid: grid,
    })
}

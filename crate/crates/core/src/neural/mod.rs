//! Byte-level convolutional detector: embedding, strided convolution, global
//! max pool, fully connected layers and a sigmoid head. Gradients are exact;
//! see [`gradcheck`].

pub mod gradcheck;
mod io;
mod train;

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::format::FormatId;
use crate::Scalar;

pub use io::{load, load_expecting, save, MODEL_MAGIC, MODEL_VERSION};
pub use train::{targets, train, train_detector, train_with, EpochStats, TrainConfig, Trainer};

pub const PAD: u16 = 256;
pub const VOCAB: usize = 257;
/// Samples per gradient partial sum; partials are added in batch order.
const GRAD_CHUNK: usize = 4;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("model version or configuration mismatch: {0}")]
    VersionMismatch(String),
    #[error("corrupt model file: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Head {
    Binary,
    Multilabel,
}

impl Head {
    pub fn outputs(self) -> usize {
        match self {
            Head::Binary => 1,
            Head::Multilabel => FormatId::KNOWN.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvNetConfig {
    pub max_len: usize,
    pub embed_dim: usize,
    pub window: usize,
    pub stride: usize,
    pub filters: usize,
    pub fc_sizes: Vec<usize>,
    pub head: Head,
    /// MalConv-style gating: conv output times sigmoid of a second conv,
    /// instead of ReLU.
    pub gated: bool,
    /// Keep the first H and last T bytes of long inputs instead of the prefix.
    pub head_tail: Option<(usize, usize)>,
}

impl ConvNetConfig {
    pub fn polyconv(head: Head) -> Self {
        ConvNetConfig {
            max_len: 16384,
            embed_dim: 8,
            window: 16,
            stride: 8,
            filters: 128,
            fc_sizes: vec![512, 512, 128],
            head,
            gated: false,
            head_tail: None,
        }
    }

    /// The stock MalConv layout used as the comparison arm.
    pub fn malconv(head: Head) -> Self {
        ConvNetConfig {
            window: 512,
            stride: 512,
            fc_sizes: vec![128],
            gated: true,
            ..ConvNetConfig::polyconv(head)
        }
    }

    pub fn tiny(head: Head) -> Self {
        ConvNetConfig {
            max_len: 64,
            filters: 4,
            fc_sizes: vec![8, 8, 4],
            ..ConvNetConfig::polyconv(head)
        }
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |m: &str| Err(NeuralError::Config(m.to_string()));
        if self.embed_dim == 0 || self.window == 0 || self.stride == 0 || self.filters == 0 {
            return bad("dimensions must be positive");
        }
        if self.max_len < self.window || !self.max_len.is_multiple_of(self.stride) {
            return bad("max_len must be at least the window and a multiple of the stride");
        }
        if self.fc_sizes.contains(&0) {
            return bad("fully connected layers must be nonempty");
        }
        if let Some((h, t)) = self.head_tail {
            if h + t != self.max_len {
                return bad("head and tail lengths must sum to max_len");
            }
        }
        Ok(())
    }

    pub fn windows(&self) -> usize {
        (self.max_len - self.window) / self.stride + 1
    }

    fn kernel_len(&self) -> usize {
        self.window * self.embed_dim
    }

    /// Truncate (or head/tail-select) to capacity; padding is implicit.
    pub fn encode(&self, bytes: &[u8]) -> Vec<u16> {
        match self.head_tail {
            Some((h, t)) if bytes.len() > self.max_len => {
                bytes[..h].iter().chain(&bytes[bytes.len() - t..]).map(|&b| b as u16).collect()
            }
            _ => bytes[..bytes.len().min(self.max_len)].iter().map(|&b| b as u16).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major, `outputs` rows of `inputs`.
    pub w: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense { inputs, outputs, w: vec![T::zero(); inputs * outputs], b: vec![T::zero(); outputs] }
    }

    fn apply(&self, x: &[T], out: &mut Vec<T>) {
        out.clear();
        out.extend(self.b.iter().zip(self.w.chunks(self.inputs)).map(|(&b, row)| b + dot(row, x)));
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub(crate) fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Sigmoid cross-entropy from a logit, stable for large |z|.
pub(crate) fn bce_with_logit<T: Scalar>(z: T, y: T) -> T {
    z.max(T::zero()) - z * y + (T::one() + (-z.abs()).exp()).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvNetParams<T> {
    pub config: ConvNetConfig,
    /// `VOCAB` rows of `embed_dim`.
    pub embedding: Vec<T>,
    /// `filters` rows of `window * embed_dim`, window-position major.
    pub conv_w: Vec<T>,
    pub conv_b: Vec<T>,
    /// Same shapes as the conv tensors when gated, else empty.
    pub gate_w: Vec<T>,
    pub gate_b: Vec<T>,
    /// Hidden layers followed by the head.
    pub dense: Vec<Dense<T>>,
}

/// Per-sample forward state kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct Trace<T> {
    argmax: Vec<usize>,
    conv_pre: Vec<T>,
    gate_pre: Vec<T>,
    /// Input to each dense layer; `acts[0]` is the pooled vector.
    acts: Vec<Vec<T>>,
    logits: Vec<T>,
}

impl<T: Scalar> Trace<T> {
    /// Everything a parameter nudge could flip discontinuously.
    pub(crate) fn pattern(&self) -> (Vec<usize>, Vec<bool>) {
        let signs = self
            .conv_pre
            .iter()
            .chain(self.acts.iter().skip(1).flatten())
            .map(|&v| v > T::zero())
            .collect();
        (self.argmax.clone(), signs)
    }
}

impl<T: Scalar> ConvNetParams<T> {
    pub fn zeros(config: &ConvNetConfig) -> Self {
        let (f, k) = (config.filters, config.kernel_len());
        let gated = if config.gated { 1 } else { 0 };
        let mut dense = Vec::new();
        let mut inputs = f;
        for &n in config.fc_sizes.iter().chain([config.head.outputs()].iter()) {
            dense.push(Dense::zeros(inputs, n));
            inputs = n;
        }
        ConvNetParams {
            config: config.clone(),
            embedding: vec![T::zero(); VOCAB * config.embed_dim],
            conv_w: vec![T::zero(); f * k],
            conv_b: vec![T::zero(); f],
            gate_w: vec![T::zero(); gated * f * k],
            gate_b: vec![T::zero(); gated * f],
            dense,
        }
    }

    /// Embedding rows uniform in ±sqrt(3/E) (unit variance); conv and dense
    /// weights Glorot-uniform, limit sqrt(6/(fan_in+fan_out)); biases zero.
    pub fn init(config: &ConvNetConfig, seed: u64) -> Result<Self, NeuralError> {
        config.validate()?;
        let mut p = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |v: &mut [T], limit: f64| {
            for x in v {
                *x = T::from_f64(rng.gen_range(-limit..limit)).unwrap();
            }
        };
        fill(&mut p.embedding, (3.0 / config.embed_dim as f64).sqrt());
        let (k, f) = (config.kernel_len() as f64, config.filters as f64);
        fill(&mut p.conv_w, (6.0 / (k + f)).sqrt());
        fill(&mut p.gate_w, (6.0 / (k + f)).sqrt());
        for d in &mut p.dense {
            fill(&mut d.w, (6.0 / (d.inputs + d.outputs) as f64).sqrt());
        }
        Ok(p)
    }

    /// The same trunk under a freshly initialized output layer for `head`.
    pub fn with_head(&self, head: Head, seed: u64) -> Result<Self, NeuralError> {
        let config = ConvNetConfig { head, ..self.config.clone() };
        let mut p = Self::init(&config, seed)?;
        let last = p.dense.len() - 1;
        p.embedding.clone_from(&self.embedding);
        p.conv_w.clone_from(&self.conv_w);
        p.conv_b.clone_from(&self.conv_b);
        p.gate_w.clone_from(&self.gate_w);
        p.gate_b.clone_from(&self.gate_b);
        p.dense[..last].clone_from_slice(&self.dense[..last]);
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    /// Named tensors in serialization order.
    pub fn tensors(&self) -> Vec<(String, &[T])> {
        let mut out: Vec<(String, &[T])> = vec![
            ("embedding".into(), &self.embedding),
            ("conv.w".into(), &self.conv_w),
            ("conv.b".into(), &self.conv_b),
        ];
        if self.config.gated {
            out.push(("gate.w".into(), &self.gate_w));
            out.push(("gate.b".into(), &self.gate_b));
        }
        let last = self.dense.len() - 1;
        for (i, d) in self.dense.iter().enumerate() {
            let name = if i == last { "head".to_string() } else { format!("fc{}", i + 1) };
            out.push((format!("{name}.w"), &d.w));
            out.push((format!("{name}.b"), &d.b));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = vec![&mut self.embedding, &mut self.conv_w, &mut self.conv_b];
        if self.config.gated {
            out.push(&mut self.gate_w);
            out.push(&mut self.gate_b);
        }
        for d in &mut self.dense {
            out.push(&mut d.w);
            out.push(&mut d.b);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in a.iter_mut().zip(b.1) {
                *x += y;
            }
        }
    }

    fn token_at(tokens: &[u16], pos: usize) -> usize {
        tokens.get(pos).map_or(PAD as usize, |&t| t as usize)
    }

    fn window_input(&self, tokens: &[u16], index: usize, x: &mut [T]) {
        let e = self.config.embed_dim;
        let start = index * self.config.stride;
        for j in 0..self.config.window {
            let t = Self::token_at(tokens, start + j);
            x[j * e..(j + 1) * e].copy_from_slice(&self.embedding[t * e..(t + 1) * e]);
        }
    }

    fn transpose(w: &[T], rows: usize, cols: usize) -> Vec<T> {
        let mut t = vec![T::zero(); w.len()];
        for r in 0..rows {
            for c in 0..cols {
                t[c * rows + r] = w[r * cols + c];
            }
        }
        t
    }

    /// Windows that can differ from each other: every window starting inside
    /// the content, plus the first all-padding one (all later ones equal it,
    /// and the pool keeps the lowest index on ties).
    fn distinct_windows(&self, content: usize) -> usize {
        self.config.windows().min(content.div_ceil(self.config.stride) + 1)
    }

    fn conv_pool(&self, tokens: &[u16]) -> (Vec<T>, Vec<usize>, Vec<T>, Vec<T>) {
        let (f, k) = (self.config.filters, self.config.kernel_len());
        let wt = Self::transpose(&self.conv_w, f, k);
        let gt = if self.config.gated { Self::transpose(&self.gate_w, f, k) } else { Vec::new() };
        let mut best = vec![T::neg_infinity(); f];
        let mut argmax = vec![0usize; f];
        let mut conv_pre = vec![T::zero(); f];
        let mut gate_pre = vec![T::zero(); if self.config.gated { f } else { 0 }];
        let mut x = vec![T::zero(); k];
        let mut out = vec![T::zero(); f];
        let mut gout = vec![T::zero(); f];
        for i in 0..self.distinct_windows(tokens.len()) {
            self.window_input(tokens, i, &mut x);
            out.copy_from_slice(&self.conv_b);
            for (kk, &xk) in x.iter().enumerate() {
                axpy(&mut out, xk, &wt[kk * f..(kk + 1) * f]);
            }
            if self.config.gated {
                gout.copy_from_slice(&self.gate_b);
                for (kk, &xk) in x.iter().enumerate() {
                    axpy(&mut gout, xk, &gt[kk * f..(kk + 1) * f]);
                }
            }
            for j in 0..f {
                let a = if self.config.gated { out[j] * sigmoid(gout[j]) } else { out[j].max(T::zero()) };
                if a > best[j] {
                    best[j] = a;
                    argmax[j] = i;
                    conv_pre[j] = out[j];
                    if self.config.gated {
                        gate_pre[j] = gout[j];
                    }
                }
            }
        }
        (best, argmax, conv_pre, gate_pre)
    }

    pub(crate) fn trace(&self, tokens: &[u16]) -> Trace<T> {
        self.trace_masked(tokens, None)
    }

    /// Forward pass with optional dropout masks, one per dense layer input.
    fn trace_masked(&self, tokens: &[u16], masks: Option<&[Vec<T>]>) -> Trace<T> {
        let tokens = &tokens[..tokens.len().min(self.config.max_len)];
        let (pooled, argmax, conv_pre, gate_pre) = self.conv_pool(tokens);
        let mut acts = vec![pooled];
        let mut logits = Vec::new();
        let last = self.dense.len() - 1;
        for (i, d) in self.dense.iter().enumerate() {
            if let Some(m) = masks {
                acts[i].iter_mut().zip(&m[i]).for_each(|(a, &k)| *a *= k);
            }
            let mut out = Vec::with_capacity(d.outputs);
            d.apply(acts.last().unwrap(), &mut out);
            if i == last {
                logits = out;
            } else {
                out.iter_mut().for_each(|v| *v = v.max(T::zero()));
                acts.push(out);
            }
        }
        Trace { argmax, conv_pre, gate_pre, acts, logits }
    }

    /// Output probabilities for a token sequence (values 0..=256, at most
    /// `max_len` used, right-padded with [`PAD`]).
    pub fn forward_tokens(&self, tokens: &[u16]) -> Vec<T> {
        self.trace(tokens).logits.into_iter().map(sigmoid).collect()
    }

    pub fn forward(&self, bytes: &[u8]) -> Vec<T> {
        self.forward_tokens(&self.config.encode(bytes))
    }

    /// Binary head: polyglot iff the probability is strictly above 0.5.
    pub fn predict_polyglot(&self, bytes: &[u8]) -> bool {
        self.forward(bytes)[0] > T::from_f64(0.5).unwrap()
    }

    /// Multi-label head: every format whose probability is strictly above 0.5.
    pub fn predict_labels(&self, bytes: &[u8]) -> BTreeSet<FormatId> {
        labels_from_probs(&self.forward(bytes))
    }

    /// Add the gradient of `scale * loss(tokens, target)` into `grad` and
    /// return the unscaled summed loss and the probabilities.
    pub(crate) fn accumulate(
        &self,
        tokens: &[u16],
        target: &[T],
        masks: Option<&[Vec<T>]>,
        scale: T,
        grad: &mut Self,
    ) -> (T, Vec<T>) {
        let tokens = &tokens[..tokens.len().min(self.config.max_len)];
        let tr = self.trace_masked(tokens, masks);
        let mut loss = T::zero();
        let mut delta: Vec<T> = Vec::with_capacity(tr.logits.len());
        let mut probs = Vec::with_capacity(tr.logits.len());
        for (&z, &y) in tr.logits.iter().zip(target) {
            loss += bce_with_logit(z, y);
            let p = sigmoid(z);
            probs.push(p);
            delta.push((p - y) * scale);
        }

        for l in (0..self.dense.len()).rev() {
            let d = &self.dense[l];
            let g = &mut grad.dense[l];
            let input = &tr.acts[l];
            let mut back = vec![T::zero(); d.inputs];
            for (o, &dl) in delta.iter().enumerate() {
                if dl == T::zero() {
                    continue;
                }
                g.b[o] += dl;
                axpy(&mut g.w[o * d.inputs..(o + 1) * d.inputs], dl, input);
                axpy(&mut back, dl, &d.w[o * d.inputs..(o + 1) * d.inputs]);
            }
            if let Some(m) = masks {
                back.iter_mut().zip(&m[l]).for_each(|(b, &k)| *b *= k);
            }
            if l > 0 {
                for (b, &a) in back.iter_mut().zip(input) {
                    if a <= T::zero() {
                        *b = T::zero();
                    }
                }
            }
            delta = back;
        }

        let (k, e) = (self.config.kernel_len(), self.config.embed_dim);
        let mut x = vec![T::zero(); k];
        for (j, &dp) in delta.iter().enumerate() {
            let (dconv, dgate) = if self.config.gated {
                let s = sigmoid(tr.gate_pre[j]);
                (dp * s, dp * tr.conv_pre[j] * s * (T::one() - s))
            } else if tr.conv_pre[j] > T::zero() {
                (dp, T::zero())
            } else {
                continue;
            };
            if dconv == T::zero() && dgate == T::zero() {
                continue;
            }
            let win = tr.argmax[j];
            self.window_input(tokens, win, &mut x);
            grad.conv_b[j] += dconv;
            axpy(&mut grad.conv_w[j * k..(j + 1) * k], dconv, &x);
            let mut dx = vec![T::zero(); k];
            axpy(&mut dx, dconv, &self.conv_w[j * k..(j + 1) * k]);
            if self.config.gated {
                grad.gate_b[j] += dgate;
                axpy(&mut grad.gate_w[j * k..(j + 1) * k], dgate, &x);
                axpy(&mut dx, dgate, &self.gate_w[j * k..(j + 1) * k]);
            }
            let start = win * self.config.stride;
            for p in 0..self.config.window {
                let t = Self::token_at(tokens, start + p);
                axpy(&mut grad.embedding[t * e..(t + 1) * e], T::one(), &dx[p * e..(p + 1) * e]);
            }
        }
        (loss, probs)
    }

    /// Mean per-output sigmoid cross-entropy over a batch and its gradient.
    pub fn loss_and_grad(&self, batch: &[(&[u8], &[T])]) -> (T, Self) {
        let encoded: Vec<(Vec<u16>, &[T])> = batch.iter().map(|(b, y)| (self.config.encode(b), *y)).collect();
        let refs: Vec<(&[u16], &[T])> = encoded.iter().map(|(t, y)| (t.as_slice(), *y)).collect();
        let (loss, grad, _) = self.loss_and_grad_tokens(&refs);
        (loss, grad)
    }

    /// As [`Self::loss_and_grad`] on encoded inputs; also returns the
    /// per-sample probabilities. The reduction order is fixed, so results do
    /// not depend on the thread count.
    pub fn loss_and_grad_tokens(&self, batch: &[(&[u16], &[T])]) -> (T, Self, Vec<Vec<T>>) {
        self.loss_and_grad_masked(batch, None)
    }

    /// As [`Self::loss_and_grad_tokens`] with a dropout mask set per sample
    /// (see [`Self::dropout_masks`]).
    pub fn loss_and_grad_masked(
        &self,
        batch: &[(&[u16], &[T])],
        masks: Option<&[Vec<Vec<T>>]>,
    ) -> (T, Self, Vec<Vec<T>>) {
        let outputs = self.config.head.outputs();
        let n = T::from_usize(batch.len().max(1) * outputs).unwrap();
        let scale = T::one() / n;
        if let Some(m) = masks {
            assert_eq!(m.len(), batch.len());
        }
        let partials: Vec<(T, Self, Vec<Vec<T>>)> = batch
            .par_chunks(GRAD_CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut g = self.zeros_like();
                let mut loss = T::zero();
                let mut probs = Vec::with_capacity(chunk.len());
                for (i, (tokens, y)) in chunk.iter().enumerate() {
                    let mask = masks.map(|m| m[c * GRAD_CHUNK + i].as_slice());
                    let (l, p) = self.accumulate(tokens, y, mask, scale, &mut g);
                    loss += l;
                    probs.push(p);
                }
                (loss, g, probs)
            })
            .collect();
        let mut total = T::zero();
        let mut grad = self.zeros_like();
        let mut probs = Vec::with_capacity(batch.len());
        for (l, g, p) in partials {
            total += l;
            grad.add_assign(&g);
            probs.extend(p);
        }
        (total / n, grad, probs)
    }

    /// Inverted dropout: each dense layer input is kept with probability
    /// `1 - rate` and scaled by `1 / (1 - rate)`, else zeroed.
    pub fn dropout_masks(&self, rate: f64, rng: &mut impl Rng) -> Vec<Vec<T>> {
        let keep = T::from_f64(1.0 / (1.0 - rate)).unwrap();
        self.dense
            .iter()
            .map(|d| (0..d.inputs).map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep }).collect())
            .collect()
    }
}

pub fn labels_from_probs<T: Scalar>(probs: &[T]) -> BTreeSet<FormatId> {
    let half = T::from_f64(0.5).unwrap();
    FormatId::KNOWN.iter().zip(probs).filter(|(_, &p)| p > half).map(|(&f, _)| f).collect()
}

impl ConvNetParams<f32> {
    pub fn to_f64(&self) -> ConvNetParams<f64> {
        convert(self)
    }
}

impl ConvNetParams<f64> {
    pub fn to_f32(&self) -> ConvNetParams<f32> {
        convert(self)
    }
}

fn convert<A: Scalar, B: Scalar>(p: &ConvNetParams<A>) -> ConvNetParams<B> {
    let mut out = ConvNetParams::<B>::zeros(&p.config);
    for (dst, (_, src)) in out.tensors_mut().into_iter().zip(p.tensors()) {
        for (d, s) in dst.iter_mut().zip(src) {
            *d = B::from(*s).unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_bytes(seed: u64, n: usize) -> Vec<u8> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen()).collect()
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let c = ConvNetConfig::tiny(Head::Binary);
        let a = ConvNetParams::<f32>::init(&c, 1).unwrap();
        assert_eq!(a, ConvNetParams::<f32>::init(&c, 1).unwrap());
        assert_ne!(a, ConvNetParams::<f32>::init(&c, 2).unwrap());
        assert!(a.is_finite());
        let limit = (6.0f32 / (128.0 + 4.0)).sqrt();
        assert!(a.conv_w.iter().all(|w| w.abs() <= limit));
        assert!(a.conv_b.iter().chain(a.dense.iter().flat_map(|d| &d.b)).all(|&b| b == 0.0));
        assert!(a.embedding.iter().all(|w| w.abs() <= (3.0f32 / 8.0).sqrt()));
    }

    #[test]
    fn bad_configs_rejected() {
        let mut c = ConvNetConfig::tiny(Head::Binary);
        c.max_len = 63;
        assert!(ConvNetParams::<f32>::init(&c, 0).is_err());
        let c = ConvNetConfig { head_tail: Some((10, 10)), ..ConvNetConfig::tiny(Head::Binary) };
        assert!(c.validate().is_err());
    }

    #[test]
    fn forward_is_total_and_truncates() {
        let c = ConvNetConfig { max_len: 256, ..ConvNetConfig::tiny(Head::Multilabel) };
        let p = ConvNetParams::<f64>::init(&c, 3).unwrap();
        let empty = p.forward(b"");
        assert_eq!(empty.len(), 12);
        assert!(empty.iter().all(|&v| v > 0.0 && v < 1.0));
        let long = random_bytes(1, 256 + 1000);
        assert_eq!(p.forward(&long), p.forward(&long[..256]));
    }

    /// The pooled value must equal a max over every window of the padded
    /// sequence, not just the distinct ones.
    #[test]
    fn window_skipping_matches_full_scan() {
        let c = ConvNetConfig { max_len: 128, ..ConvNetConfig::tiny(Head::Binary) };
        let p = ConvNetParams::<f64>::init(&c, 5).unwrap();
        for len in [0usize, 1, 7, 8, 9, 40, 120, 128] {
            let tokens: Vec<u16> = random_bytes(len as u64, len).into_iter().map(u16::from).collect();
            let (pooled, argmax, _, _) = p.conv_pool(&tokens);
            let mut x = vec![0.0; c.kernel_len()];
            for f in 0..c.filters {
                let mut best = (f64::NEG_INFINITY, 0);
                for i in 0..c.windows() {
                    p.window_input(&tokens, i, &mut x);
                    let v = (p.conv_b[f] + dot(&p.conv_w[f * x.len()..(f + 1) * x.len()], &x)).max(0.0);
                    if v > best.0 {
                        best = (v, i);
                    }
                }
                assert!((pooled[f] - best.0).abs() < 1e-12, "len {len} filter {f}");
                assert_eq!(argmax[f], best.1, "len {len} filter {f}");
            }
        }
    }

    #[test]
    fn untrained_binary_output_anchor() {
        let p = ConvNetParams::<f64>::init(&ConvNetConfig::polyconv(Head::Binary), 7).unwrap();
        let out = p.forward(b"GIF89a some bytes that are not a gif");
        assert!((out[0] - 0.5).abs() < 0.1, "{out:?}");
        // Golden value recorded from this implementation.
        assert!((out[0] - ANCHOR).abs() < 1e-12, "{:.17}", out[0]);
    }
    const ANCHOR: f64 = 0.450_712_050_411_302_25;

    #[test]
    fn duplicated_sample_keeps_mean_loss() {
        let c = ConvNetConfig::tiny(Head::Multilabel);
        let p = ConvNetParams::<f64>::init(&c, 9).unwrap();
        let x = random_bytes(2, 50);
        let mut y = vec![0.0; 12];
        y[3] = 1.0;
        let (l1, g1) = p.loss_and_grad(&[(&x, &y)]);
        let (l2, g2) = p.loss_and_grad(&[(&x, &y), (&x, &y)]);
        assert!((l1 - l2).abs() < 1e-12);
        for ((_, a), (_, b)) in g1.tensors().iter().zip(g2.tensors()) {
            assert!(a.iter().zip(b).all(|(u, v)| (u - v).abs() < 1e-12));
        }
    }

    #[test]
    fn saturated_correct_output_has_near_zero_loss() {
        let c = ConvNetConfig::tiny(Head::Binary);
        let mut p = ConvNetParams::<f64>::init(&c, 4).unwrap();
        let last = p.dense.len() - 1;
        p.dense[last].b[0] = 40.0;
        let (loss, grad) = p.loss_and_grad(&[(b"abc", &[1.0])]);
        assert!(loss < 1e-12);
        let norm: f64 = grad.tensors().iter().flat_map(|(_, t)| t.iter()).map(|v| v * v).sum();
        assert!(norm.sqrt() < 1e-12);
    }

    #[test]
    fn gradient_independent_of_thread_count() {
        let c = ConvNetConfig::tiny(Head::Binary);
        let p = ConvNetParams::<f32>::init(&c, 1).unwrap();
        let xs: Vec<Vec<u8>> = (0..11).map(|i| random_bytes(i, 30 + i as usize)).collect();
        let ys: Vec<[f32; 1]> = (0..11).map(|i| [(i % 2) as f32]).collect();
        let batch: Vec<(&[u8], &[f32])> = xs.iter().zip(&ys).map(|(x, y)| (x.as_slice(), y.as_slice())).collect();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| p.loss_and_grad(&batch));
        let b = four.install(|| p.loss_and_grad(&batch));
        assert_eq!(a, b);
    }

    #[test]
    fn threshold_is_strict() {
        assert!(labels_from_probs(&[0.5f64; 12]).is_empty());
        assert_eq!(labels_from_probs(&[0.6f64, 0.5, 0.4, 0.9, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]), BTreeSet::from([FormatId::Bmp, FormatId::Png]));
    }

    #[test]
    fn head_tail_keeps_both_ends() {
        let c = ConvNetConfig { head_tail: Some((48, 16)), ..ConvNetConfig::tiny(Head::Binary) };
        let bytes: Vec<u8> = (0..100).collect();
        let t = c.encode(&bytes);
        assert_eq!(t.len(), 64);
        assert_eq!((t[0], t[47], t[48], t[63]), (0, 47, 84, 99));
        assert_eq!(c.encode(&bytes[..10]).len(), 10);
    }
}

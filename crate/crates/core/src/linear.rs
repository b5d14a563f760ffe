//! Feature-space baseline: one logistic model per output over
//! [`FeatureVector`], trained with Adam on sigmoid cross-entropy plus an L2
//! penalty on the weights.
//!
//! Model file layout, integers little-endian:
//!
//! ```text
//! "PGLIN"  u16 version
//! u8 head (0 binary, 1 multi-label)  u8 normalize_hist
//! u32 K, then K entries of (u8 length, bytes)
//! u32 outputs  u32 dim
//! f32 * outputs*dim weights (row per output)  f32 * outputs biases
//! u32 CRC-32 of everything above
//! ```

use rand::seq::SliceRandom;
use rayon::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::features::{featurize, ngram_vocab, FeatureError, FeatureSpec, FeatureVector};
use crate::format::crc32;
use crate::neural::gradcheck::relative_error;
use crate::neural::{bce_with_logit, labels_from_probs, sigmoid, targets, EpochStats, Head};
use crate::optim::{Adam, AdamConfig};
use crate::{FormatId, Scalar};
use std::collections::BTreeSet;

pub const LINEAR_MAGIC: &[u8; 5] = b"PGLIN";
pub const LINEAR_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum LinearError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("feature vector has {got} entries, model expects {expected}")]
    SpecMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("model version mismatch: {0}")]
    VersionMismatch(String),
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Features(#[from] FeatureError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Drives batch shuffling.
    pub seed: u64,
    /// Coefficient of `l2 / 2 * |w|^2`; biases are not penalized.
    pub l2: f64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig { lr: 1e-2, epochs: 40, batch_size: 32, seed: 0, l2: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel<T> {
    pub spec: FeatureSpec,
    pub head: Head,
    /// `outputs` rows of `spec.dim()`.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> LinearModel<T> {
    pub fn zeros(spec: FeatureSpec, head: Head) -> Self {
        let n = head.outputs();
        LinearModel { weights: vec![T::zero(); n * spec.dim()], bias: vec![T::zero(); n], spec, head }
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    fn logits(&self, x: &[T]) -> Vec<T> {
        self.bias
            .iter()
            .zip(self.weights.chunks(self.dim()))
            .map(|(&b, w)| b + w.iter().zip(x).fold(T::zero(), |acc, (&a, &v)| acc + a * v))
            .collect()
    }

    pub fn predict_proba(&self, x: &FeatureVector<T>) -> Result<Vec<T>, LinearError> {
        if x.len() != self.dim() {
            return Err(LinearError::SpecMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(self.logits(&x.to_vec()).into_iter().map(sigmoid).collect())
    }

    /// Featurize with the model's own spec, then predict.
    pub fn forward(&self, bytes: &[u8]) -> Vec<T> {
        self.predict_proba(&featurize(bytes, &self.spec)).expect("spec is the model's own")
    }

    pub fn predict_polyglot(&self, bytes: &[u8]) -> bool {
        self.forward(bytes)[0] > T::from_f64(0.5).unwrap()
    }

    pub fn predict_labels(&self, bytes: &[u8]) -> BTreeSet<FormatId> {
        labels_from_probs(&self.forward(bytes))
    }

    /// Mean per-output cross-entropy over the batch plus the L2 term, and
    /// gradients for (weights, bias).
    pub fn loss_and_grad(&self, batch: &[(&[T], &[T])], l2: T) -> (T, Vec<T>, Vec<T>) {
        let d = self.dim();
        let n = T::from_usize(batch.len().max(1) * self.head.outputs()).unwrap();
        let mut gw = vec![T::zero(); self.weights.len()];
        let mut gb = vec![T::zero(); self.bias.len()];
        let mut loss = T::zero();
        for (x, y) in batch {
            for (o, (z, &t)) in self.logits(x).into_iter().zip(y.iter()).enumerate() {
                loss += bce_with_logit(z, t);
                let delta = (sigmoid(z) - t) / n;
                gb[o] += delta;
                for (g, &v) in gw[o * d..(o + 1) * d].iter_mut().zip(x.iter()) {
                    *g += delta * v;
                }
            }
        }
        let half = T::from_f64(0.5).unwrap();
        let mut penalty = T::zero();
        for (g, &w) in gw.iter_mut().zip(&self.weights) {
            *g += l2 * w;
            penalty += w * w;
        }
        (loss / n + half * l2 * penalty, gw, gb)
    }
}

/// Build the n-gram vocabulary from `samples` (training data only), then
/// featurize and train.
pub fn train_linear_on_samples<T: Scalar>(
    samples: &[(Vec<u8>, BTreeSet<FormatId>)],
    head: Head,
    vocab_size: usize,
    normalize_hist: bool,
    config: &LinearConfig,
) -> Result<(LinearModel<T>, Vec<EpochStats>), LinearError> {
    if samples.is_empty() {
        return Err(LinearError::EmptyDataset);
    }
    let bytes: Vec<&[u8]> = samples.iter().map(|(b, _)| b.as_slice()).collect();
    let spec = ngram_vocab(&bytes, vocab_size, normalize_hist)?;
    let data: Vec<(Vec<T>, Vec<T>)> = samples
        .par_iter()
        .map(|(b, l)| (featurize::<T>(b, &spec).to_vec(), targets(head, l)))
        .collect();
    train_linear(spec, head, &data, config)
}

/// Train from zero weights. `data` holds feature vectors (as produced by
/// [`FeatureVector::to_vec`]) and target vectors.
pub fn train_linear<T: Scalar>(
    spec: FeatureSpec,
    head: Head,
    data: &[(Vec<T>, Vec<T>)],
    config: &LinearConfig,
) -> Result<(LinearModel<T>, Vec<EpochStats>), LinearError> {
    if data.is_empty() {
        return Err(LinearError::EmptyDataset);
    }
    if config.batch_size == 0 || config.lr <= 0.0 || config.l2 < 0.0 {
        return Err(LinearError::Config("batch size and learning rate must be positive, l2 nonnegative".into()));
    }
    let mut model = LinearModel::zeros(spec, head);
    for (x, y) in data {
        if x.len() != model.dim() {
            return Err(LinearError::SpecMismatch { expected: model.dim(), got: x.len() });
        }
        if y.len() != head.outputs() {
            return Err(LinearError::Config(format!("targets must have {} entries", head.outputs())));
        }
    }
    let l2 = T::from_f64(config.l2).unwrap();
    let half = T::from_f64(0.5).unwrap();
    let mut adam = Adam::new(AdamConfig { lr: config.lr, ..AdamConfig::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&[T], &[T])> = chunk.iter().map(|&i| (data[i].0.as_slice(), data[i].1.as_slice())).collect();
            for (x, y) in &batch {
                let probs: Vec<T> = model.logits(x).into_iter().map(sigmoid).collect();
                correct += probs.iter().zip(y.iter()).all(|(&p, &t)| (p > half) == (t > half)) as usize;
            }
            let (loss, gw, gb) = model.loss_and_grad(&batch, l2);
            loss_sum += loss.to_f64().unwrap() * chunk.len() as f64;
            adam.step(vec![&mut model.weights, &mut model.bias], vec![&gw, &gb]);
        }
        history.push(EpochStats {
            epoch,
            head,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        });
    }
    Ok((model, history))
}

fn param(m: &mut LinearModel<f64>, bias: bool, i: usize) -> &mut f64 {
    if bias {
        &mut m.bias[i]
    } else {
        &mut m.weights[i]
    }
}

/// Largest relative error between analytic and central-difference gradients
/// over `coords` random weight coordinates and every bias.
pub fn check_linear_gradients(model: &LinearModel<f64>, batch: &[(Vec<f64>, Vec<f64>)], l2: f64, eps: f64, coords: usize, seed: u64) -> f64 {
    let refs: Vec<(&[f64], &[f64])> = batch.iter().map(|(x, y)| (x.as_slice(), y.as_slice())).collect();
    let (_, gw, gb) = model.loss_and_grad(&refs, l2);
    let loss_at = |m: &LinearModel<f64>| m.loss_and_grad(&refs, l2).0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<(bool, usize)> =
        (0..coords).map(|_| (false, rng.gen_range(0..gw.len()))).chain((0..gb.len()).map(|i| (true, i))).collect();
    let mut m = model.clone();
    let mut worst = 0.0f64;
    for (bias, i) in picks {
        let orig = *param(&mut m, bias, i);
        *param(&mut m, bias, i) = orig + eps;
        let plus = loss_at(&m);
        *param(&mut m, bias, i) = orig - eps;
        let minus = loss_at(&m);
        *param(&mut m, bias, i) = orig;
        let analytic = if bias { gb[i] } else { gw[i] };
        worst = worst.max(relative_error(analytic, (plus - minus) / (2.0 * eps)));
    }
    worst
}

pub fn save_linear<T: Scalar>(model: &LinearModel<T>) -> Vec<u8> {
    let mut out = LINEAR_MAGIC.to_vec();
    out.extend_from_slice(&LINEAR_VERSION.to_le_bytes());
    out.push(match model.head {
        Head::Binary => 0,
        Head::Multilabel => 1,
    });
    out.push(model.spec.normalize_hist as u8);
    out.extend_from_slice(&(model.spec.k() as u32).to_le_bytes());
    for g in model.spec.vocab() {
        out.push(g.len() as u8);
        out.extend_from_slice(g);
    }
    out.extend_from_slice(&(model.head.outputs() as u32).to_le_bytes());
    out.extend_from_slice(&(model.dim() as u32).to_le_bytes());
    for v in model.weights.iter().chain(&model.bias) {
        out.extend_from_slice(&v.to_f32().unwrap().to_le_bytes());
    }
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn load_linear<T: Scalar>(bytes: &[u8]) -> Result<LinearModel<T>, LinearError> {
    let corrupt = |m: &str| LinearError::Corrupt(m.to_string());
    if bytes.len() < 7 || &bytes[..5] != LINEAR_MAGIC {
        return Err(corrupt("missing PGLIN magic"));
    }
    let version = u16::from_le_bytes([bytes[5], bytes[6]]);
    if version != LINEAR_VERSION {
        return Err(LinearError::VersionMismatch(format!("file version {version}, expected {LINEAR_VERSION}")));
    }
    if bytes.len() < 11 {
        return Err(corrupt("truncated"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    if crc32(body) != u32::from_le_bytes(trailer.try_into().unwrap()) {
        return Err(corrupt("checksum mismatch"));
    }
    let mut pos = 7;
    let mut take = |n: usize| -> Result<&[u8], LinearError> {
        let s = body.get(pos..pos + n).ok_or_else(|| corrupt("truncated"))?;
        pos += n;
        Ok(s)
    };
    let head = match take(1)?[0] {
        0 => Head::Binary,
        1 => Head::Multilabel,
        h => return Err(LinearError::Corrupt(format!("unknown head {h}"))),
    };
    let normalize = take(1)?[0] != 0;
    let k = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut vocab = Vec::with_capacity(k.min(1 << 20));
    for _ in 0..k {
        let n = take(1)?[0] as usize;
        vocab.push(take(n)?.to_vec());
    }
    let spec = FeatureSpec::new(vocab, normalize).map_err(|e| LinearError::Corrupt(e.to_string()))?;
    let outputs = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    if outputs != head.outputs() || dim != spec.dim() {
        return Err(corrupt("shape does not match head and vocabulary"));
    }
    let mut model = LinearModel::<T>::zeros(spec, head);
    for v in model.weights.iter_mut().chain(model.bias.iter_mut()) {
        let x = f32::from_le_bytes(take(4)?.try_into().unwrap());
        if !x.is_finite() {
            return Err(corrupt("non-finite parameter"));
        }
        *v = T::from_f32(x).unwrap();
    }
    if pos != body.len() {
        return Err(corrupt("trailing bytes after parameters"));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{HIST_LEN, MIME_LEN};

    fn spec() -> FeatureSpec {
        FeatureSpec::new(vec![b"ab".to_vec(), b"abc".to_vec(), b"zz".to_vec()], true).unwrap()
    }

    fn one_hot(spec: &FeatureSpec, slot: usize) -> Vec<f64> {
        let mut x = vec![0.0; spec.dim()];
        x[HIST_LEN + slot] = 1.0;
        x
    }

    #[test]
    fn separable_mime_classes() {
        let s = spec();
        let data: Vec<(Vec<f64>, Vec<f64>)> = (0..20).map(|i| (one_hot(&s, i % 2), vec![(i % 2) as f64])).collect();
        let cfg = LinearConfig { epochs: 50, batch_size: 4, ..LinearConfig::default() };
        let (m, h) = train_linear(s.clone(), Head::Binary, &data, &cfg).unwrap();
        assert_eq!(h.last().unwrap().accuracy, 1.0);
        let (m2, _) = train_linear(s, Head::Binary, &data, &cfg).unwrap();
        assert_eq!(m, m2);
    }

    #[test]
    fn zero_vector_gives_sigmoid_of_bias() {
        let mut m = LinearModel::<f64>::zeros(spec(), Head::Multilabel);
        m.bias[3] = 1.5;
        let zero = FeatureVector { hist: vec![0.0; HIST_LEN], mime: vec![0.0; MIME_LEN], ngrams: vec![0.0; 3] };
        let p = m.predict_proba(&zero).unwrap();
        assert_eq!(p[3], sigmoid(1.5));
        assert_eq!(p[0], 0.5);
        let short = FeatureVector { ngrams: vec![0.0; 2], ..zero };
        assert!(matches!(m.predict_proba(&short), Err(LinearError::SpecMismatch { .. })));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let s = spec();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = LinearModel::<f64>::zeros(s.clone(), Head::Multilabel);
        m.weights.iter_mut().chain(m.bias.iter_mut()).for_each(|w| *w = rng.gen_range(-0.5..0.5));
        let batch: Vec<(Vec<f64>, Vec<f64>)> = (0..5)
            .map(|_| {
                let x = (0..s.dim()).map(|_| rng.gen_range(0.0..1.0)).collect();
                let y = (0..12).map(|_| rng.gen_range(0..2) as f64).collect();
                (x, y)
            })
            .collect();
        let err = check_linear_gradients(&m, &batch, 1e-3, 1e-4, 50, 2);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn file_round_trip_and_corruption() {
        let mut m = LinearModel::<f32>::zeros(spec(), Head::Binary);
        m.weights[7] = 0.25;
        m.bias[0] = -1.0;
        let bytes = save_linear(&m);
        let back: LinearModel<f32> = load_linear(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(save_linear(&back), bytes);
        assert!(matches!(load_linear::<f32>(&bytes[..bytes.len() - 3]), Err(LinearError::Corrupt(_))));
        let mut v = bytes.clone();
        v[5] = 2;
        assert!(matches!(load_linear::<f32>(&v), Err(LinearError::VersionMismatch(_))));
    }
}

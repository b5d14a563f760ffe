//! Feature space for the linear baseline: byte histogram, one-hot of the
//! first identified format, and counts of the most frequent 2- and 3-grams.

use std::collections::HashMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::format::{identify_first, FormatId};
use crate::Scalar;

pub const HIST_LEN: usize = 256;
pub const MIME_LEN: usize = FormatId::ALL.len();
pub const DEFAULT_K: usize = 2000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeatureError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("vocabulary size must be at least 1")]
    ZeroK,
    #[error("invalid vocabulary entry {0:?}")]
    BadEntry(Vec<u8>),
}

/// Key for a 2- or 3-gram: length in the top byte, bytes big-endian below.
type Gram = u32;

fn gram_key(g: &[u8]) -> Gram {
    g.iter().fold(0u32, |acc, &b| acc << 8 | b as u32) | (g.len() as u32) << 24
}

fn gram_bytes(k: Gram) -> Vec<u8> {
    let len = (k >> 24) as usize;
    (0..len).map(|i| (k >> (8 * (len - 1 - i))) as u8).collect()
}

#[derive(Debug, Clone)]
pub struct FeatureSpec {
    vocab: Vec<Vec<u8>>,
    pub normalize_hist: bool,
    index: HashMap<Gram, usize>,
}

impl PartialEq for FeatureSpec {
    fn eq(&self, other: &Self) -> bool {
        self.vocab == other.vocab && self.normalize_hist == other.normalize_hist
    }
}

impl FeatureSpec {
    pub fn new(vocab: Vec<Vec<u8>>, normalize_hist: bool) -> Result<Self, FeatureError> {
        let mut index = HashMap::with_capacity(vocab.len());
        for (i, g) in vocab.iter().enumerate() {
            if !(2..=3).contains(&g.len()) || index.insert(gram_key(g), i).is_some() {
                return Err(FeatureError::BadEntry(g.clone()));
            }
        }
        Ok(FeatureSpec { vocab, normalize_hist, index })
    }

    pub fn vocab(&self) -> &[Vec<u8>] {
        &self.vocab
    }

    pub fn k(&self) -> usize {
        self.vocab.len()
    }

    pub fn dim(&self) -> usize {
        HIST_LEN + MIME_LEN + self.k()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<T> {
    pub hist: Vec<T>,
    pub mime: Vec<T>,
    pub ngrams: Vec<T>,
}

impl<T: Scalar> FeatureVector<T> {
    pub fn len(&self) -> usize {
        self.hist.len() + self.mime.len() + self.ngrams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = T> + '_ {
        self.hist.iter().chain(&self.mime).chain(&self.ngrams).copied()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.iter().collect()
    }
}

pub fn byte_histogram<T: Scalar>(bytes: &[u8], normalize: bool) -> Vec<T> {
    let mut counts = [0u64; HIST_LEN];
    for &b in bytes {
        counts[b as usize] += 1;
    }
    let denom = if normalize && !bytes.is_empty() { bytes.len() as f64 } else { 1.0 };
    counts.iter().map(|&c| T::from_f64(c as f64 / denom).unwrap()).collect()
}

fn count_grams(bytes: &[u8], counts: &mut HashMap<Gram, u64>) {
    for w in bytes.windows(2) {
        *counts.entry(gram_key(w)).or_default() += 1;
    }
    for w in bytes.windows(3) {
        *counts.entry(gram_key(w)).or_default() += 1;
    }
}

/// The `k` most frequent grams pooled over both lengths. Ties go to the
/// shorter gram, then to the lexicographically smaller one.
pub fn ngram_vocab<S: AsRef<[u8]> + Sync>(samples: &[S], k: usize, normalize_hist: bool) -> Result<FeatureSpec, FeatureError> {
    if k == 0 {
        return Err(FeatureError::ZeroK);
    }
    if samples.iter().all(|s| s.as_ref().is_empty()) {
        return Err(FeatureError::EmptyCorpus);
    }
    let counts = samples
        .par_iter()
        .fold(HashMap::new, |mut acc, s| {
            count_grams(s.as_ref(), &mut acc);
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            for (g, c) in b {
                *a.entry(g).or_default() += c;
            }
            a
        });
    // Keys order by length first, then bytes.
    let mut ranked: Vec<(Gram, u64)> = counts.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    FeatureSpec::new(ranked.into_iter().map(|(g, _)| gram_bytes(g)).collect(), normalize_hist)
}

pub fn featurize<T: Scalar>(bytes: &[u8], spec: &FeatureSpec) -> FeatureVector<T> {
    let hist = byte_histogram(bytes, spec.normalize_hist);
    let mut mime = vec![T::zero(); MIME_LEN];
    mime[identify_first(bytes).index()] = T::one();
    let mut counts = vec![0u64; spec.k()];
    for n in [2, 3] {
        for w in bytes.windows(n) {
            if let Some(&j) = spec.index.get(&gram_key(w)) {
                counts[j] += 1;
            }
        }
    }
    let ngrams = counts.into_iter().map(|c| T::from_u64(c).unwrap()).collect();
    FeatureVector { hist, mime, ngrams }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab_of(spec: &FeatureSpec) -> Vec<&[u8]> {
        spec.vocab().iter().map(|v| v.as_slice()).collect()
    }

    #[test]
    fn histogram_examples() {
        assert!(byte_histogram::<f64>(b"", true).iter().all(|&x| x == 0.0));
        let ramp: Vec<u8> = (0..=255).collect();
        assert!(byte_histogram::<f64>(&ramp, false).iter().all(|&x| x == 1.0));
        let h = byte_histogram::<f64>(b"aaab", false);
        assert_eq!((h[0x61], h[0x62], h.iter().sum::<f64>()), (3.0, 1.0, 4.0));
        let h = byte_histogram::<f64>(b"aaab", true);
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vocab_examples() {
        let spec = ngram_vocab(&[b"abab"], 2, true).unwrap();
        assert_eq!(vocab_of(&spec), [&b"ab"[..], b"ba"]);
        let spec = ngram_vocab(&[b"aaaa"], 3, true).unwrap();
        assert_eq!(vocab_of(&spec), [&b"aa"[..], b"aaa"]);
        assert_eq!(ngram_vocab::<&[u8]>(&[b""], 3, true), Err(FeatureError::EmptyCorpus));
    }

    #[test]
    fn featurize_examples() {
        let spec = FeatureSpec::new(vec![b"ab".to_vec(), b"ba".to_vec()], false).unwrap();
        let v = featurize::<f64>(b"abab", &spec);
        assert_eq!(v.ngrams, [2.0, 1.0]);
        assert_eq!(v.len(), 256 + 13 + 2);

        let empty = featurize::<f64>(b"", &spec);
        assert!(empty.hist.iter().all(|&x| x == 0.0));
        assert_eq!(empty.mime[FormatId::Unknown.index()], 1.0);
        assert!(empty.ngrams.iter().all(|&x| x == 0.0));

        let png = crate::corpus::synth_donor(FormatId::Png, 1, 200).unwrap();
        assert_eq!(featurize::<f32>(&png, &spec).mime[FormatId::Png.index()], 1.0);
    }

    #[test]
    fn duplicate_vocab_rejected() {
        assert!(FeatureSpec::new(vec![b"ab".to_vec(), b"ab".to_vec()], true).is_err());
        assert!(FeatureSpec::new(vec![b"a".to_vec()], true).is_err());
    }

    /// Brute-force recount over every substring position.
    fn recount(bytes: &[u8], gram: &[u8]) -> u64 {
        (0..bytes.len()).filter(|&i| bytes[i..].starts_with(gram)).count() as u64
    }

    proptest! {
        #[test]
        fn counts_match_sliding_recount(data in proptest::collection::vec(proptest::collection::vec(0u8..6, 0..60), 1..6), k in 1usize..30) {
            prop_assume!(data.iter().any(|d| !d.is_empty()));
            let spec = ngram_vocab(&data, k, false).unwrap();
            prop_assert!(spec.k() <= k);
            let totals: Vec<u64> = spec.vocab().iter().map(|g| data.iter().map(|d| recount(d, g)).sum()).collect();
            prop_assert!(totals.windows(2).all(|w| w[0] >= w[1]));
            for d in &data {
                let v = featurize::<f64>(d, &spec);
                for (g, &c) in spec.vocab().iter().zip(&v.ngrams) {
                    prop_assert_eq!(c as u64, recount(d, g));
                }
            }
        }

        #[test]
        fn vocab_ignores_sample_order(mut data in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 1..40), 1..6)) {
            let a = ngram_vocab(&data, 20, true).unwrap();
            data.reverse();
            prop_assert_eq!(a, ngram_vocab(&data, 20, true).unwrap());
        }

        #[test]
        fn appending_never_decreases_counts(a in proptest::collection::vec(any::<u8>(), 0..80), b in proptest::collection::vec(any::<u8>(), 0..20)) {
            let spec = ngram_vocab(&[&a[..], &b[..], b"xyz"], 50, false).unwrap();
            let va = featurize::<f64>(&a, &spec);
            let mut ab = a.clone();
            ab.extend_from_slice(&b);
            let vab = featurize::<f64>(&ab, &spec);
            prop_assert!(va.hist.iter().zip(&vab.hist).all(|(x, y)| x <= y));
            prop_assert!(va.ngrams.iter().zip(&vab.ngrams).all(|(x, y)| x <= y));
        }
    }
}

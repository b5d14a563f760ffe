use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{ConvNetConfig, ConvNetParams, Head, NeuralError};
use crate::format::FormatId;
use crate::optim::{Adam, AdamConfig};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Drives batch shuffling; initialization takes its own seed.
    pub seed: u64,
    pub adam: AdamConfig,
    /// Dropout rate on every dense layer input during training, in [0, 1).
    pub dropout: f64,
    /// For a binary detector: epochs on the multi-label targets before the
    /// output layer is replaced by the binary head. The format-level targets
    /// force the trunk to learn signatures rather than donor identities.
    pub pretrain_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 32,
            seed: 0,
            adam: AdamConfig::default(),
            dropout: 0.0,
            pretrain_epochs: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub head: Head,
    /// Mean training loss over the epoch, measured before each update.
    pub loss: f64,
    /// Fraction of samples whose thresholded outputs all match the target.
    pub accuracy: f64,
}

/// Target vector for a label set: binary is 1 for polyglots.
pub fn targets<T: Scalar>(head: Head, labels: &BTreeSet<FormatId>) -> Vec<T> {
    match head {
        Head::Binary => vec![if labels.len() > 1 { T::one() } else { T::zero() }],
        Head::Multilabel => FormatId::KNOWN
            .iter()
            .map(|f| if labels.contains(f) { T::one() } else { T::zero() })
            .collect(),
    }
}

pub struct Trainer<T> {
    adam: Adam<T>,
    dropout: f64,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(adam: AdamConfig) -> Self {
        Self::with_dropout(adam, 0.0, 0)
    }

    /// Masks are drawn from a stream seeded by `seed`.
    pub fn with_dropout(adam: AdamConfig, dropout: f64, seed: u64) -> Self {
        Trainer { adam: Adam::new(adam), dropout, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// One optimizer step; returns the pre-update loss and probabilities
    /// (under dropout, the probabilities of the masked network).
    pub fn step(&mut self, params: &mut ConvNetParams<T>, batch: &[(&[u16], &[T])]) -> (T, Vec<Vec<T>>) {
        let masks: Option<Vec<_>> = (self.dropout > 0.0)
            .then(|| batch.iter().map(|_| params.dropout_masks(self.dropout, &mut self.rng)).collect());
        let (loss, grad, probs) = params.loss_and_grad_masked(batch, masks.as_deref());
        let grads: Vec<&[T]> = grad.tensors().into_iter().map(|(_, t)| t).collect();
        self.adam.step(params.tensors_mut(), grads);
        (loss, probs)
    }
}

fn matches<T: Scalar>(probs: &[T], target: &[T]) -> bool {
    let half = T::from_f64(0.5).unwrap();
    probs.iter().zip(target).all(|(&p, &y)| (p > half) == (y > half))
}

pub fn train<T: Scalar>(
    params: &mut ConvNetParams<T>,
    data: &[(Vec<u8>, Vec<T>)],
    config: &TrainConfig,
) -> Result<Vec<EpochStats>, NeuralError> {
    train_with(params, data, config, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with<T: Scalar>(
    params: &mut ConvNetParams<T>,
    data: &[(Vec<u8>, Vec<T>)],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>, NeuralError> {
    if data.is_empty() {
        return Err(NeuralError::EmptyDataset);
    }
    if config.batch_size == 0 || config.adam.lr <= 0.0 {
        return Err(NeuralError::Config("batch size and learning rate must be positive".into()));
    }
    if !(0.0..1.0).contains(&config.dropout) {
        return Err(NeuralError::Config("dropout must be in [0, 1)".into()));
    }
    let outputs = params.config.head.outputs();
    if data.iter().any(|(_, y)| y.len() != outputs) {
        return Err(NeuralError::Config(format!("targets must have {outputs} entries")));
    }
    let encoded: Vec<Vec<u16>> = data.iter().map(|(b, _)| params.config.encode(b)).collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trainer = Trainer::with_dropout(config.adam.clone(), config.dropout, config.seed ^ 0x5eed_d409);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&[u16], &[T])> = chunk.iter().map(|&i| (encoded[i].as_slice(), data[i].1.as_slice())).collect();
            let (loss, probs) = trainer.step(params, &batch);
            loss_sum += loss.to_f64().unwrap() * chunk.len() as f64;
            correct += probs.iter().zip(&batch).filter(|(p, (_, y))| matches(p, y)).count();
        }
        let stats = EpochStats {
            epoch,
            head: params.config.head,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(history)
}

/// Initialize and train a detector on labelled samples, pretraining a
/// binary detector's trunk on multi-label targets when configured. Epoch
/// numbering runs on across the two phases.
pub fn train_detector<T: Scalar>(
    net: &ConvNetConfig,
    init_seed: u64,
    samples: &[(Vec<u8>, BTreeSet<FormatId>)],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(ConvNetParams<T>, Vec<EpochStats>), NeuralError> {
    let data = |head: Head| -> Vec<(Vec<u8>, Vec<T>)> {
        samples.iter().map(|(b, l)| (b.clone(), targets(head, l))).collect()
    };
    let mut history = Vec::new();
    let mut params = if net.head == Head::Binary && config.pretrain_epochs > 0 {
        let multi = ConvNetConfig { head: Head::Multilabel, ..net.clone() };
        let mut p = ConvNetParams::init(&multi, init_seed)?;
        let pre = TrainConfig { epochs: config.pretrain_epochs, ..config.clone() };
        history = train_with(&mut p, &data(Head::Multilabel), &pre, &mut on_epoch)?;
        p.with_head(Head::Binary, init_seed ^ 0x4ead)?
    } else {
        ConvNetParams::init(net, init_seed)?
    };
    let offset = history.len();
    let fine = TrainConfig { seed: config.seed.wrapping_add(offset as u64), ..config.clone() };
    let rest = train_with(&mut params, &data(net.head), &fine, |s| {
        on_epoch(&EpochStats { epoch: s.epoch + offset, ..s.clone() })
    })?;
    history.extend(rest.into_iter().map(|s| EpochStats { epoch: s.epoch + offset, ..s }));
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn targets_encode_labels() {
        let poly = BTreeSet::from([FormatId::Png, FormatId::Zip]);
        assert_eq!(targets::<f32>(Head::Binary, &poly), [1.0]);
        assert_eq!(targets::<f32>(Head::Binary, &BTreeSet::from([FormatId::Png])), [0.0]);
        let m = targets::<f32>(Head::Multilabel, &poly);
        assert_eq!(m.iter().sum::<f32>(), 2.0);
        assert_eq!((m[FormatId::Png.index()], m[FormatId::Zip.index()]), (1.0, 1.0));
    }

    #[test]
    fn overfits_a_single_sample() {
        let c = ConvNetConfig { max_len: 256, ..ConvNetConfig::polyconv(Head::Multilabel) };
        let mut p = ConvNetParams::<f32>::init(&c, 1).unwrap();
        let x = b"<?php echo 'hi'; ?>".to_vec();
        let y = targets::<f32>(Head::Multilabel, &BTreeSet::from([FormatId::Php, FormatId::Gif]));
        let tokens = c.encode(&x);
        let mut t = Trainer::new(AdamConfig::default());
        let mut loss = f32::MAX;
        for _ in 0..200 {
            loss = t.step(&mut p, &[(&tokens, &y)]).0;
        }
        let (final_loss, _) = p.loss_and_grad(&[(&x, &y)]);
        assert!(final_loss < 1e-3, "{loss} {final_loss}");
    }

    #[test]
    fn same_seed_same_history() {
        let c = ConvNetConfig::tiny(Head::Binary);
        let data: Vec<(Vec<u8>, Vec<f32>)> =
            (0..20u8).map(|i| (vec![i; 10 + i as usize], vec![(i % 2) as f32])).collect();
        let cfg = TrainConfig { epochs: 3, batch_size: 4, seed: 5, ..TrainConfig::default() };
        let mut a = ConvNetParams::<f32>::init(&c, 1).unwrap();
        let mut b = a.clone();
        let ha = train(&mut a, &data, &cfg).unwrap();
        let hb = train(&mut b, &data, &cfg).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
        assert!(matches!(train(&mut a, &[], &cfg), Err(NeuralError::EmptyDataset)));
    }

    #[test]
    fn pretraining_keeps_the_trunk_and_swaps_the_head() {
        let net = ConvNetConfig::tiny(Head::Binary);
        let samples: Vec<(Vec<u8>, BTreeSet<FormatId>)> = (0..12u8)
            .map(|i| {
                let l = if i % 2 == 0 { BTreeSet::from([FormatId::Png]) } else { BTreeSet::from([FormatId::Png, FormatId::Zip]) };
                (vec![i; 20], l)
            })
            .collect();
        let cfg = TrainConfig { epochs: 2, pretrain_epochs: 3, batch_size: 4, ..TrainConfig::default() };
        let (p, h) = train_detector::<f64>(&net, 7, &samples, &cfg, |_| {}).unwrap();
        assert_eq!(p.config.head, Head::Binary);
        assert_eq!(h.iter().map(|s| (s.epoch, s.head)).collect::<Vec<_>>(), [
            (0, Head::Multilabel),
            (1, Head::Multilabel),
            (2, Head::Multilabel),
            (3, Head::Binary),
            (4, Head::Binary)
        ]);
        let none = TrainConfig { pretrain_epochs: 0, ..cfg };
        let (_, h) = train_detector::<f64>(&net, 7, &samples, &none, |_| {}).unwrap();
        assert!(h.iter().all(|s| s.head == Head::Binary) && h.len() == 2);
    }

    #[test]
    fn with_head_copies_everything_but_the_output_layer() {
        let p = ConvNetParams::<f64>::init(&ConvNetConfig::tiny(Head::Multilabel), 3).unwrap();
        let b = p.with_head(Head::Binary, 4).unwrap();
        let n = p.dense.len() - 1;
        assert_eq!((b.embedding == p.embedding, b.conv_w == p.conv_w), (true, true));
        assert_eq!(b.dense[..n], p.dense[..n]);
        assert_eq!(b.dense[n].outputs, 1);
    }
}

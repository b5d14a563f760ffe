//! Central-difference gradient check. The network is piecewise smooth (ReLU
//! and max-pool selection), so coordinates whose ±ε nudge changes any pool
//! argmax or activation sign are redrawn rather than compared.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ConvNetParams;

/// Gradients smaller than this are compared absolutely.
pub const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

type Pattern = Vec<(Vec<usize>, Vec<bool>)>;

fn pattern(p: &ConvNetParams<f64>, batch: &[(&[u16], &[f64])]) -> Pattern {
    batch.iter().map(|(t, _)| p.trace(t).pattern()).collect()
}

fn nudged(p: &ConvNetParams<f64>, tensor: usize, index: usize, delta: f64) -> ConvNetParams<f64> {
    let mut q = p.clone();
    q.tensors_mut()[tensor][index] += delta;
    q
}

/// Compare analytic and numeric gradients on `coords` random coordinates of
/// every tensor.
pub fn check_gradients(
    params: &ConvNetParams<f64>,
    batch: &[(Vec<u16>, Vec<f64>)],
    eps: f64,
    coords: usize,
    seed: u64,
) -> Vec<TensorCheck> {
    let batch: Vec<(&[u16], &[f64])> = batch.iter().map(|(t, y)| (t.as_slice(), y.as_slice())).collect();
    let (_, grad, _) = params.loss_and_grad_tokens(&batch);
    let base = pattern(params, &batch);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let mut out = Vec::new();
    for (ti, name) in names.into_iter().enumerate() {
        let analytic = grad.tensors()[ti].1.to_vec();
        let mut check = TensorCheck { name, checked: 0, skipped: 0, max_rel_error: 0.0 };
        let budget = coords * 50;
        while check.checked < coords && check.checked + check.skipped < budget {
            let i = rng.gen_range(0..analytic.len());
            let plus = nudged(params, ti, i, eps);
            let minus = nudged(params, ti, i, -eps);
            if pattern(&plus, &batch) != base || pattern(&minus, &batch) != base {
                check.skipped += 1;
                continue;
            }
            let lp = plus.loss_and_grad_tokens(&batch).0;
            let lm = minus.loss_and_grad_tokens(&batch).0;
            let numeric = (lp - lm) / (2.0 * eps);
            check.max_rel_error = check.max_rel_error.max(relative_error(analytic[i], numeric));
            check.checked += 1;
        }
        out.push(check);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{targets, ConvNetConfig, Head};
    use crate::FormatId;
    use std::collections::BTreeSet;

    fn batch(config: &ConvNetConfig, seed: u64) -> Vec<(Vec<u16>, Vec<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..3)
            .map(|i| {
                let len = rng.gen_range(10..config.max_len + 20);
                let bytes: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
                let labels = if i % 2 == 0 {
                    BTreeSet::from([FormatId::Png])
                } else {
                    BTreeSet::from([FormatId::Gif, FormatId::Php])
                };
                (config.encode(&bytes), targets(config.head, &labels))
            })
            .collect()
    }

    fn assert_passes(config: ConvNetConfig) {
        let p = ConvNetParams::<f64>::init(&config, 11).unwrap();
        for c in check_gradients(&p, &batch(&config, 2), 1e-3, 100, 3) {
            assert_eq!(c.checked, 100, "{c:?}");
            assert!(c.max_rel_error < 1e-4, "{c:?}");
        }
    }

    #[test]
    fn polyconv_gradients_match_finite_differences() {
        assert_passes(ConvNetConfig::tiny(Head::Binary));
        assert_passes(ConvNetConfig::tiny(Head::Multilabel));
    }

    #[test]
    fn gated_gradients_match_finite_differences() {
        assert_passes(ConvNetConfig {
            max_len: 64,
            window: 16,
            stride: 16,
            filters: 4,
            fc_sizes: vec![8],
            ..ConvNetConfig::malconv(Head::Multilabel)
        });
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        let config = ConvNetConfig::tiny(Head::Binary);
        let p = ConvNetParams::<f64>::init(&config, 11).unwrap();
        let data = batch(&config, 2);
        let refs: Vec<(&[u16], &[f64])> = data.iter().map(|(t, y)| (t.as_slice(), y.as_slice())).collect();
        let (_, g, _) = p.loss_and_grad_tokens(&refs);
        let i = g.conv_b.iter().position(|&v| v != 0.0).unwrap();
        let numeric = (nudged(&p, 2, i, 1e-3).loss_and_grad_tokens(&refs).0
            - nudged(&p, 2, i, -1e-3).loss_and_grad_tokens(&refs).0)
            / 2e-3;
        assert!(relative_error(g.conv_b[i], numeric) < 1e-4);
        assert!(relative_error(g.conv_b[i] * 1.01, numeric) > 1e-3);
    }
}

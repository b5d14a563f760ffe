use std::collections::BTreeSet;

use num_traits::{FromPrimitive, Num};
use serde::Serialize;
use thiserror::Error;

use crate::format::FormatId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("no positive labels")]
    NoPositives,
    #[error("score {0} is not finite")]
    NonFinite(usize),
}

/// Precision, recall and F1, each 0 when its denominator is 0.
pub fn prf1(tp: u64, fp: u64, fn_: u64) -> (f64, f64, f64) {
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let (p, r) = (ratio(tp, tp + fp), ratio(tp, tp + fn_));
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn add(&mut self, truth: bool, predicted: bool) {
        match (truth, predicted) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn prf1(&self) -> (f64, f64, f64) {
        prf1(self.tp, self.fp, self.fn_)
    }
}

/// Precision-recall points (one per distinct score, recall ascending) and
/// average precision.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve<F> {
    pub points: Vec<(F, F)>,
    pub auc: F,
}

/// Average precision: samples sorted by descending score with equal scores
/// forming one group; every positive in a group is credited the precision
/// at that group's cut, and the credits are averaged over positives.
pub fn pr_auc<F: Num + Clone + FromPrimitive>(scores: &[f64], labels: &[bool]) -> Result<PrCurve<F>, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite(i));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(MetricError::NoPositives);
    }
    let n = |x: usize| F::from_usize(x).unwrap();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut seen, mut tp) = (0, 0);
    let mut credit = F::zero();
    let mut points = Vec::new();
    for group in order.chunk_by(|&a, &b| scores[a] == scores[b]) {
        let hits = group.iter().filter(|&&i| labels[i]).count();
        seen += group.len();
        tp += hits;
        let precision = n(tp) / n(seen);
        credit = credit + n(hits) * precision.clone();
        points.push((n(tp) / n(positives), precision));
    }
    Ok(PrCurve { points, auc: credit / n(positives) })
}

/// Exact-set match over files: a file is a true positive only when the
/// predicted set equals the truth; a wrong nonempty prediction is a false
/// positive, and every file without an exact match is a false negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExactMatch {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn multilabel_exact(preds: &[BTreeSet<FormatId>], truths: &[BTreeSet<FormatId>]) -> ExactMatch {
    assert_eq!(preds.len(), truths.len(), "one prediction per truth");
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, t) in preds.iter().zip(truths) {
        if p == t && !t.is_empty() {
            tp += 1;
            continue;
        }
        if !p.is_empty() {
            fp += 1;
        }
        if !t.is_empty() {
            fn_ += 1;
        }
    }
    let (precision, recall, f1) = prf1(tp, fp, fn_);
    ExactMatch { tp, fp, fn_, precision, recall, f1 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prf1_examples() {
        let third = 2.0 / 3.0;
        assert_eq!(prf1(2, 1, 1), (third, third, 2.0 * third * third / (2.0 * third)));
        assert_eq!(prf1(0, 0, 0), (0.0, 0.0, 0.0));
        assert_eq!(prf1(5, 0, 0), (1.0, 1.0, 1.0));
        let (p, r, _) = prf1(3, 1, 4);
        let (p2, r2, _) = prf1(3, 4, 1);
        assert_eq!((p, r), (r2, p2));
    }

    #[test]
    fn pr_auc_examples() {
        let auc = |s: &[f64], l: &[bool]| pr_auc::<f64>(s, l).unwrap().auc;
        assert_eq!(auc(&[0.9, 0.8, 0.1], &[true, true, false]), 1.0);
        assert!((auc(&[0.9, 0.8, 0.1], &[false, true, true]) - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(auc(&[0.3, 0.3], &[true, false]), 0.5);
        assert_eq!(pr_auc::<f64>(&[0.1], &[false]), Err(MetricError::NoPositives));
        assert_eq!(pr_auc::<f64>(&[0.1, f64::NAN], &[true, false]), Err(MetricError::NonFinite(1)));
        let c = pr_auc::<f64>(&[0.9, 0.5, 0.5, 0.1], &[true, false, true, false]).unwrap();
        assert_eq!(c.points, [(0.5, 1.0), (1.0, 2.0 / 3.0), (1.0, 0.5)]);
    }

    #[test]
    fn exact_match_examples() {
        let s = |v: &[FormatId]| v.iter().copied().collect::<BTreeSet<_>>();
        let truth = s(&[FormatId::Png, FormatId::Zip]);
        let preds = [truth.clone(), s(&[FormatId::Png]), s(&[FormatId::Png, FormatId::Zip, FormatId::Hta]), s(&[])];
        let m = multilabel_exact(&preds, &vec![truth; 4]);
        assert_eq!((m.tp, m.fp, m.fn_), (1, 2, 3));
        assert_eq!((m.precision, m.recall), (1.0 / 3.0, 0.25));
    }
}

//! Support-weighted precision / recall / F1 for the binary sarcasm task.

use serde::{Deserialize, Serialize};

use super::SarcasmLabel;
use crate::error::{Error, Result};

/// Confusion counts with "sarcastic" as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Per-class scores as fractions in [0, 1].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Weighted averages in percent, plus the raw counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: ConfusionCounts,
    /// Index 0 = non-sarcastic, 1 = sarcastic.
    pub per_class: [ClassMetrics; 2],
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn class_metrics(tp: usize, fp: usize, fn_: usize) -> ClassMetrics {
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    ClassMetrics {
        precision,
        recall,
        f1,
        support: tp + fn_,
    }
}

/// Scores predictions against truths. Undefined ratios (no predictions or no
/// support for a class) count as 0.
pub fn evaluate_detector(predictions: &[SarcasmLabel], truths: &[SarcasmLabel]) -> Result<DetectionMetrics> {
    if predictions.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if truths.is_empty() {
        return Err(Error::InvalidInput("no items to evaluate".into()));
    }
    let mut counts = ConfusionCounts::default();
    for (p, t) in predictions.iter().zip(truths) {
        match (p.is_sarcastic(), t.is_sarcastic()) {
            (true, true) => counts.tp += 1,
            (true, false) => counts.fp += 1,
            (false, true) => counts.fn_ += 1,
            (false, false) => counts.tn += 1,
        }
    }
    let pos = class_metrics(counts.tp, counts.fp, counts.fn_);
    let neg = class_metrics(counts.tn, counts.fn_, counts.fp);
    let n = truths.len() as f64;
    let weighted = |f: fn(&ClassMetrics) -> f64| -> f64 {
        100.0 * (f(&neg) * neg.support as f64 + f(&pos) * pos.support as f64) / n
    };
    Ok(DetectionMetrics {
        precision: weighted(|c| c.precision),
        recall: weighted(|c| c.recall),
        f1: weighted(|c| c.f1),
        counts,
        per_class: [neg, pos],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(v: &[u8]) -> Vec<SarcasmLabel> {
        v.iter().map(|&x| SarcasmLabel::try_from(x).unwrap()).collect()
    }

    #[test]
    fn perfect_predictions() {
        let t = labels(&[1, 0, 1, 1, 0]);
        let m = evaluate_detector(&t, &t).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (100.0, 100.0, 100.0));
    }

    #[test]
    fn worked_example() {
        let m = evaluate_detector(&labels(&[1, 1, 0, 0, 1]), &labels(&[1, 1, 1, 0, 0])).unwrap();
        let [neg, pos] = m.per_class;
        assert!((pos.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((pos.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((neg.precision - 0.5).abs() < 1e-12);
        assert!((neg.recall - 0.5).abs() < 1e-12);
        assert!((m.f1 - 60.0).abs() < 1e-9);
    }

    #[test]
    fn single_class_predictions_on_balanced_truths() {
        let m = evaluate_detector(&labels(&[1, 1, 1, 1]), &labels(&[1, 1, 0, 0])).unwrap();
        assert!((m.f1 - 100.0 / 3.0).abs() < 1e-9);
        assert_eq!(m.counts.total(), 4);
    }

    #[test]
    fn length_mismatch_errors() {
        assert!(evaluate_detector(&labels(&[1]), &labels(&[1, 0])).is_err());
        assert!(evaluate_detector(&[], &[]).is_err());
    }
}

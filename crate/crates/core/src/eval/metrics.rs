use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::Label;

/// Counts with "fake" as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn from_labels(pred: &[Label], gold: &[Label]) -> Result<Self, EvalError> {
        if pred.len() != gold.len() {
            return Err(EvalError::Argument(format!(
                "{} predictions for {} gold labels",
                pred.len(),
                gold.len()
            )));
        }
        let mut m = ConfusionMatrix::default();
        for (p, g) in pred.iter().zip(gold) {
            match (p, g) {
                (Label::Fake, Label::Fake) => m.tp += 1,
                (Label::Fake, Label::Real) => m.fp += 1,
                (Label::Real, Label::Fake) => m.fn_ += 1,
                (Label::Real, Label::Real) => m.tn += 1,
            }
        }
        Ok(m)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// The same counts with the classes swapped.
    pub fn flipped(&self) -> Self {
        ConfusionMatrix {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassMetrics {
    /// Metrics for the positive class of `m`.
    fn positive(m: &ConfusionMatrix) -> Self {
        let precision = ratio(m.tp, m.tp + m.fp);
        let recall = ratio(m.tp, m.tp + m.fn_);
        // 2pr / (p + r) in count form, which keeps hand-computed values exact
        let f1 = ratio(2 * m.tp, 2 * m.tp + m.fp + m.fn_);
        ClassMetrics {
            precision,
            recall,
            f1,
            support: m.tp + m.fn_,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub real: ClassMetrics,
    pub fake: ClassMetrics,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

impl Metrics {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        let fake = ClassMetrics::positive(&confusion);
        let real = ClassMetrics::positive(&confusion.flipped());
        Metrics {
            macro_precision: (real.precision + fake.precision) / 2.0,
            macro_recall: (real.recall + fake.recall) / 2.0,
            macro_f1: (real.f1 + fake.f1) / 2.0,
            accuracy: ratio(confusion.tp + confusion.tn, confusion.total()),
            real,
            fake,
            confusion,
        }
    }
}

/// Per-class and macro-averaged precision, recall and F1. A ratio with a zero
/// denominator is 0, and F1 is 0 when precision + recall is 0.
pub fn metrics(pred: &[Label], gold: &[Label]) -> Result<Metrics, EvalError> {
    if gold.is_empty() {
        return Err(EvalError::Argument("nothing to evaluate".into()));
    }
    Ok(Metrics::from_confusion(ConfusionMatrix::from_labels(pred, gold)?))
}

/// Macro-F1, or 0 for mismatched or empty inputs.
pub fn macro_f1(pred: &[Label], gold: &[Label]) -> f64 {
    metrics(pred, gold).map_or(0.0, |m| m.macro_f1)
}

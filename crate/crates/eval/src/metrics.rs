//! Strict part scoring and confusion metrics.
//!
//! Each case contributes two parts. Its correct part is a positive: predicted
//! 1 only when every step in it was judged correct. Its error part is a
//! negative: predicted 0 only when every step in it was judged incorrect or
//! missing. Metrics are kept as exact ratios and only rounded for display.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PartPrediction {
    pub correct_part_pred: u8,
    pub error_part_pred: u8,
}

impl PartPrediction {
    /// What a perfect judge produces, and the ground truth of every case.
    pub const GROUND: PartPrediction = PartPrediction { correct_part_pred: 1, error_part_pred: 0 };
    /// Score of a case whose predictions could not be used.
    pub const FAILED: PartPrediction = PartPrediction { correct_part_pred: 0, error_part_pred: 1 };

    pub fn new(correct_part_ok: bool, error_part_flagged: bool) -> Self {
        PartPrediction { correct_part_pred: correct_part_ok.into(), error_part_pred: (!error_part_flagged).into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub fp: u64,
}

impl Confusion {
    pub fn add(&mut self, pred: PartPrediction) {
        if pred.correct_part_pred == 1 {
            self.tp += 1;
        } else {
            self.fn_ += 1;
        }
        if pred.error_part_pred == 0 {
            self.tn += 1;
        } else {
            self.fp += 1;
        }
    }

    pub fn from_predictions<'a>(preds: impl IntoIterator<Item = &'a PartPrediction>) -> Self {
        let mut confusion = Confusion::default();
        for pred in preds {
            confusion.add(*pred);
        }
        confusion
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.tn + self.fp
    }

    pub fn metrics(&self) -> Result<Metrics, MetricsError> {
        if self.total() == 0 {
            return Err(MetricsError::EmptyGroup);
        }
        let Confusion { tp, fn_, tn, fp } = *self;
        Ok(Metrics {
            accuracy: Ratio::new(tp + tn, self.total()),
            f1: Ratio::new(2 * tp, 2 * tp + fp + fn_),
            precision: Ratio::new(tp, tp + fp),
            tpr: Ratio::new(tp, tp + fn_),
            tnr: Ratio::new(tn, tn + fp),
            fpr: Ratio::new(fp, tn + fp),
            fnr: Ratio::new(fn_, tp + fn_),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("cannot compute metrics for an empty group")]
    EmptyGroup,
}

/// A non-negative fraction. A zero denominator reads as 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Self {
        if den == 0 {
            Ratio { num: 0, den: 1 }
        } else {
            Ratio { num, den }
        }
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Hundredths, rounded half up.
    pub fn hundredths(&self) -> u128 {
        let (num, den) = (self.num as u128, self.den as u128);
        (200 * num + den) / (2 * den)
    }

    pub fn rounded(&self) -> String {
        let h = self.hundredths();
        format!("{}.{:02}", h / 100, h % 100)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.rounded())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Metrics {
    pub accuracy: Ratio,
    pub f1: Ratio,
    pub precision: Ratio,
    pub tpr: Ratio,
    pub tnr: Ratio,
    pub fpr: Ratio,
    pub fnr: Ratio,
}

impl Metrics {
    pub const COLUMNS: [&'static str; 7] = ["Accuracy", "F1", "Precision", "TPR", "TNR", "FPR", "FNR"];

    /// Values in column order.
    pub fn values(&self) -> [Ratio; 7] {
        [self.accuracy, self.f1, self.precision, self.tpr, self.tnr, self.fpr, self.fnr]
    }

    pub fn row(&self) -> String {
        self.values().iter().map(Ratio::rounded).collect::<Vec<_>>().join(" ")
    }
}

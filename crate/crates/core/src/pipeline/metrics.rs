use serde::{Deserialize, Serialize};

use crate::calibration::{ace, ece, PredictionSet};
use crate::error::{Error, Result};

/// Binary confusion counts with class 1 as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn from_predictions(predicted: &[usize], labels: &[usize]) -> Result<Self> {
        if predicted.len() != labels.len() {
            return Err(Error::Input("prediction and label counts differ".into()));
        }
        let mut c = Self::default();
        for (&p, &l) in predicted.iter().zip(labels) {
            match (p == 1, l == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub specificity: f64,
    pub ece: f64,
    pub ace: f64,
}

impl Metrics {
    pub const NAMES: [&'static str; 7] = ["precision", "recall", "f1", "accuracy", "specificity", "ece", "ace"];

    pub fn values(&self) -> [f64; 7] {
        [
            self.precision,
            self.recall,
            self.f1,
            self.accuracy,
            self.specificity,
            self.ece,
            self.ace,
        ]
    }

    pub fn from_values(v: [f64; 7]) -> Self {
        Self {
            precision: v[0],
            recall: v[1],
            f1: v[2],
            accuracy: v[3],
            specificity: v[4],
            ece: v[5],
            ace: v[6],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub confusion: ConfusionMatrix,
    /// Names of ratios whose denominator was zero; they are reported as 0.
    pub undefined: Vec<String>,
}

fn ratio(num: usize, den: usize, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0 {
        undefined.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Classification metrics from a confusion matrix; calibration fields zero.
pub fn classification_metrics(c: &ConfusionMatrix) -> (Metrics, Vec<String>) {
    let mut undefined = Vec::new();
    let precision = ratio(c.tp, c.tp + c.fp, "precision", &mut undefined);
    let recall = ratio(c.tp, c.tp + c.fn_, "recall", &mut undefined);
    let specificity = ratio(c.tn, c.tn + c.fp, "specificity", &mut undefined);
    let accuracy = ratio(c.tp + c.tn, c.total(), "accuracy", &mut undefined);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        undefined.push("f1".into());
        0.0
    };
    (
        Metrics {
            precision,
            recall,
            f1,
            accuracy,
            specificity,
            ece: 0.0,
            ace: 0.0,
        },
        undefined,
    )
}

pub fn evaluate_predictions(preds: &PredictionSet, ece_bins: usize, ace_ranges: usize) -> Result<Evaluation> {
    let confusion = ConfusionMatrix::from_predictions(&preds.predicted_classes(), preds.labels())?;
    let (mut metrics, undefined) = classification_metrics(&confusion);
    metrics.ece = ece(preds, ece_bins)?.0;
    metrics.ace = ace(preds, ace_ranges.min(preds.len()))?.0;
    Ok(Evaluation {
        metrics,
        confusion,
        undefined,
    })
}

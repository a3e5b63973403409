//! Label smoothing, the smoothed cross-entropy loss and the calibration
//! metrics ECE (equal-width bins) and ACE (equal-mass per-class ranges).

use serde::{Deserialize, Serialize};

use crate::diff::{Matrix, Tape, Var};
use crate::error::{Error, Result};

/// Probabilities below this are clamped before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;
/// Tolerance on each probability row summing to one.
pub const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    probs: Matrix,
    labels: Vec<usize>,
}

impl PredictionSet {
    pub fn new(probs: Matrix, labels: Vec<usize>) -> Result<Self> {
        if probs.rows() != labels.len() {
            return Err(Error::Input(format!(
                "{} probability rows but {} labels",
                probs.rows(),
                labels.len()
            )));
        }
        let k = probs.cols();
        for i in 0..probs.rows() {
            let row = probs.row(i);
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Input(format!("row {i} has a probability outside [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Input(format!("row {i} sums to {s}")));
            }
            if labels[i] >= k {
                return Err(Error::Input(format!("label {} out of range for {k} classes", labels[i])));
            }
        }
        Ok(Self { probs, labels })
    }

    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.probs.cols()
    }

    /// Predicted class (first maximum) and its probability.
    pub fn prediction(&self, i: usize) -> (usize, f64) {
        let row = self.probs.row(i);
        let mut best = 0;
        for (k, p) in row.iter().enumerate() {
            if *p > row[best] {
                best = k;
            }
        }
        (best, row[best])
    }

    pub fn predicted_classes(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.prediction(i).0).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub alpha: f64,
    pub classes: usize,
}

impl SmoothingConfig {
    pub fn new(alpha: f64, classes: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Parameter(format!("smoothing alpha must lie in [0, 1], got {alpha}")));
        }
        if classes == 0 {
            return Err(Error::Parameter("smoothing needs at least one class".into()));
        }
        Ok(Self { alpha, classes })
    }

    pub fn none(classes: usize) -> Self {
        Self { alpha: 0.0, classes }
    }
}

/// `y_k (1 - α) + α / K`. The true-class entry is computed as
/// `1 - (K - 1) α / K`, which is the same quantity with less rounding.
pub fn smooth_targets(label: usize, cfg: &SmoothingConfig) -> Result<Vec<f64>> {
    let cfg = SmoothingConfig::new(cfg.alpha, cfg.classes)?;
    if label >= cfg.classes {
        return Err(Error::Input(format!("label {label} out of range for {} classes", cfg.classes)));
    }
    let off = cfg.alpha / cfg.classes as f64;
    let on = 1.0 - (cfg.classes - 1) as f64 * off;
    let mut y = vec![off; cfg.classes];
    y[label] = on;
    Ok(y)
}

/// Smoothed targets for a batch of labels, one row per label.
pub fn smooth_target_matrix(labels: &[usize], cfg: &SmoothingConfig) -> Result<Matrix> {
    let mut data = Vec::with_capacity(labels.len() * cfg.classes);
    for &l in labels {
        data.extend(smooth_targets(l, cfg)?);
    }
    Matrix::from_vec(labels.len(), cfg.classes, data)
}

/// `Σ_k -y_k log(max(p_k, 1e-12))`.
pub fn ls_cross_entropy(probs: &[f64], smoothed: &[f64]) -> Result<f64> {
    if probs.len() != smoothed.len() {
        return Err(Error::dim("ls_cross_entropy", (1, probs.len()), (1, smoothed.len())));
    }
    Ok(probs
        .iter()
        .zip(smoothed)
        .map(|(p, y)| -y * p.max(PROB_FLOOR).ln())
        .sum())
}

/// Mean smoothed cross-entropy of `probs` (`N x K`) against `targets`.
pub fn ls_cross_entropy_var<'t>(probs: Var<'t>, targets: &Matrix) -> Result<Var<'t>> {
    if probs.shape() != targets.shape() {
        return Err(Error::dim("ls_cross_entropy", probs.shape(), targets.shape()));
    }
    let tape: &Tape = probs.tape();
    let n = probs.rows() as f64;
    let y = tape.constant(targets.clone());
    Ok(probs.log_clamped(PROB_FLOOR).mul(y)?.sum().scale(-1.0 / n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinningMode {
    EqualWidth,
    EqualMass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    /// Class the range belongs to (equal-mass only).
    pub class: Option<usize>,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub accuracy: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBins {
    pub mode: BinningMode,
    pub bins: Vec<ReliabilityBin>,
}

impl ReliabilityBins {
    pub fn total_count(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }
}

/// Index of the bin `((m-1)/M, m/M]` holding `p`, zero-based.
fn equal_width_bin(p: f64, bins: usize) -> usize {
    let m = bins as f64;
    let mut idx = ((p * m).ceil() as isize - 1).clamp(0, bins as isize - 1) as usize;
    // Correct for rounding in `p * M` so membership matches the interval test.
    while idx > 0 && p <= idx as f64 / m {
        idx -= 1;
    }
    while idx + 1 < bins && p > (idx + 1) as f64 / m {
        idx += 1;
    }
    idx
}

/// Expected calibration error over `bins` equal-width confidence bins.
pub fn ece(preds: &PredictionSet, bins: usize) -> Result<(f64, ReliabilityBins)> {
    if preds.is_empty() {
        return Err(Error::Input("ece of an empty prediction set".into()));
    }
    if bins == 0 {
        return Err(Error::Parameter("ece needs at least one bin".into()));
    }
    let mut count = vec![0usize; bins];
    let mut correct = vec![0usize; bins];
    let mut conf = vec![0.0; bins];
    for i in 0..preds.len() {
        let (pred, p) = preds.prediction(i);
        let b = equal_width_bin(p, bins);
        count[b] += 1;
        conf[b] += p;
        if pred == preds.labels[i] {
            correct[b] += 1;
        }
    }
    let n = preds.len() as f64;
    let m = bins as f64;
    let mut total = 0.0;
    let mut out = Vec::with_capacity(bins);
    for b in 0..bins {
        let (accuracy, confidence) = if count[b] > 0 {
            (correct[b] as f64 / count[b] as f64, conf[b] / count[b] as f64)
        } else {
            (0.0, 0.0)
        };
        if count[b] > 0 {
            total += count[b] as f64 / n * (accuracy - confidence).abs();
        }
        out.push(ReliabilityBin {
            class: None,
            lower: b as f64 / m,
            upper: (b + 1) as f64 / m,
            count: count[b],
            accuracy,
            confidence,
        });
    }
    Ok((
        total,
        ReliabilityBins {
            mode: BinningMode::EqualWidth,
            bins: out,
        },
    ))
}

/// Adaptive calibration error with no probability threshold.
pub fn ace(preds: &PredictionSet, ranges: usize) -> Result<(f64, ReliabilityBins)> {
    ace_thresholded(preds, ranges, 0.0)
}

/// Adaptive calibration error. For every class, all samples' probabilities
/// for that class at or above `threshold` are stably sorted by
/// `(probability, index)` and split into `ranges` runs whose sizes differ by
/// at most one, with boundary samples falling in the lower range.
pub fn ace_thresholded(preds: &PredictionSet, ranges: usize, threshold: f64) -> Result<(f64, ReliabilityBins)> {
    if preds.is_empty() {
        return Err(Error::Input("ace of an empty prediction set".into()));
    }
    if ranges == 0 {
        return Err(Error::Parameter("ace needs at least one range".into()));
    }
    if ranges > preds.len() {
        return Err(Error::Parameter(format!(
            "{ranges} ranges requested for {} predictions",
            preds.len()
        )));
    }
    let k = preds.classes();
    let mut total = 0.0;
    let mut out = Vec::with_capacity(k * ranges);
    for class in 0..k {
        let mut order: Vec<usize> = (0..preds.len())
            .filter(|&i| preds.probs[(i, class)] >= threshold)
            .collect();
        order.sort_by(|&i, &j| preds.probs[(i, class)].total_cmp(&preds.probs[(j, class)]));
        let n = order.len();
        for r in 0..ranges {
            let members = &order[r * n / ranges..(r + 1) * n / ranges];
            let mut bin = ReliabilityBin {
                class: Some(class),
                lower: 0.0,
                upper: 0.0,
                count: members.len(),
                accuracy: 0.0,
                confidence: 0.0,
            };
            if let (Some(&first), Some(&last)) = (members.first(), members.last()) {
                let hits = members.iter().filter(|&&i| preds.labels[i] == class).count();
                let conf: f64 = members.iter().map(|&i| preds.probs[(i, class)]).sum();
                bin.lower = preds.probs[(first, class)];
                bin.upper = preds.probs[(last, class)];
                bin.accuracy = hits as f64 / members.len() as f64;
                bin.confidence = conf / members.len() as f64;
                total += (bin.accuracy - bin.confidence).abs();
            }
            out.push(bin);
        }
    }
    Ok((
        total / (k * ranges) as f64,
        ReliabilityBins {
            mode: BinningMode::EqualMass,
            bins: out,
        },
    ))
}

//! Non-adaptive and batch shift-correction comparators.

use serde::{Deserialize, Serialize};

use crate::bayes::{PriorPair, PRIOR_FLOOR};
use crate::error::{ObilError, Result};
use crate::metrics::{f1, ConfusionCounts};

pub const BBSE_DET_MIN: f64 = 1e-6;
pub const DEFAULT_BBSE_BATCH: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFit {
    pub threshold: f64,
    pub f1: f64,
}

/// F1-maximising threshold over `-∞`, the midpoints of adjacent distinct
/// scores, and `+∞`; predictions are `score > threshold`. Ties go to the
/// smaller threshold.
pub fn threshold_moving_fit(scores: &[f64], labels: &[u8]) -> Result<ThresholdFit> {
    if scores.len() != labels.len() {
        return Err(ObilError::Shape { expected: labels.len(), got: scores.len() });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(ObilError::NonFinite("score".into()));
    }
    let n1 = labels.iter().filter(|&&y| y == 1).count();
    if n1 == 0 || n1 == labels.len() {
        return Err(ObilError::FitFailure("threshold moving needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    if scores[order[0]] == scores[order[order.len() - 1]] {
        return Err(ObilError::FitFailure("all scores identical".into()));
    }

    // start with everything predicted positive and move the threshold up
    let mut c = ConfusionCounts::new(n1 as u64, (labels.len() - n1) as u64, 0, 0);
    let mut best = ThresholdFit { threshold: f64::NEG_INFINITY, f1: f1(&c).value };
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                c.tp -= 1;
                c.fn_ += 1;
            } else {
                c.fp -= 1;
                c.tn += 1;
            }
            i += 1;
        }
        let threshold = if i < order.len() { s + (scores[order[i]] - s) / 2.0 } else { f64::INFINITY };
        let v = f1(&c).value;
        if v > best.f1 {
            best = ThresholdFit { threshold, f1: v };
        }
    }
    Ok(best)
}

/// Shifts a logit learned under `train_p1` to the prior `test_p1`.
pub fn logit_adjust(z: f64, train_p1: f64, test_p1: f64) -> f64 {
    z + (test_p1 / (1.0 - test_p1)).ln() - (train_p1 / (1.0 - train_p1)).ln()
}

/// Black-box shift estimation: solves `C p = μ` for the target prior.
///
/// `confusion[i][j] = P(ŷ = i | y = j)` on source validation data and
/// `mu[i]` is the predicted-label frequency on the target batch.
pub fn bbse_estimate_prior(confusion: [[f64; 2]; 2], mu: [f64; 2], eta: f64) -> Result<PriorPair> {
    let [[a, b], [c, d]] = confusion;
    let det = a * d - b * c;
    if !(det.abs() > BBSE_DET_MIN) {
        return Err(ObilError::BbseUnidentifiable(det));
    }
    let p0 = (d * mu[0] - b * mu[1]) / det;
    let p1 = (a * mu[1] - c * mu[0]) / det;
    let (p0, p1) = (p0.max(0.0), p1.max(0.0));
    let total = p0 + p1;
    if !(total > 0.0 && total.is_finite()) {
        return Err(ObilError::BbseUnidentifiable(det));
    }
    Ok(PriorPair::clipped(p1 / total, eta))
}

/// Column-stochastic `P(ŷ | y)` from labelled validation predictions.
pub fn confusion_matrix(preds: &[u8], labels: &[u8]) -> Result<[[f64; 2]; 2]> {
    let c = ConfusionCounts::from_predictions(preds, labels)?;
    let pos = (c.tp + c.fn_) as f64;
    let neg = (c.tn + c.fp) as f64;
    if pos == 0.0 || neg == 0.0 {
        return Err(ObilError::FitFailure("confusion matrix needs both classes".into()));
    }
    Ok([[c.tn as f64 / neg, c.fn_ as f64 / pos], [c.fp as f64 / neg, c.tp as f64 / pos]])
}

/// Decision rules in log-likelihood-ratio space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShiftCorrection {
    /// Fixed Bayes threshold at the training prior: `q > Q_C · Q_P^train`.
    None { qc: f64, train_p1: f64 },
    /// Fitted cut on the log-ratio score.
    ThresholdMoving { threshold: f64 },
    /// Logit of the training-prior posterior shifted to `test_p1`.
    LogitAdjustment { train_p1: f64, test_p1: f64 },
    /// Bayes threshold at an estimated target prior.
    Bbse { qc: f64, estimated_p1: f64 },
}

impl ShiftCorrection {
    pub fn decide(&self, log_lr: f64) -> u8 {
        match *self {
            Self::None { qc, train_p1 } => u8::from(log_lr.exp() > qc * (1.0 - train_p1) / train_p1),
            Self::ThresholdMoving { threshold } => u8::from(log_lr > threshold),
            Self::LogitAdjustment { train_p1, test_p1 } => {
                let z = log_lr + (train_p1 / (1.0 - train_p1)).ln();
                u8::from(logit_adjust(z, train_p1, test_p1) > 0.0)
            }
            Self::Bbse { qc, estimated_p1 } => u8::from(log_lr.exp() > qc * (1.0 - estimated_p1) / estimated_p1),
        }
    }
}

/// Streaming BBSE: re-estimates the target prior after every full batch
/// of predictions made at the source threshold.
#[derive(Debug, Clone)]
pub struct BbseTracker {
    confusion: [[f64; 2]; 2],
    qc: f64,
    source_p1: f64,
    batch_size: usize,
    seen: usize,
    predicted_pos: usize,
    estimate_p1: f64,
}

impl BbseTracker {
    pub fn new(confusion: [[f64; 2]; 2], qc: f64, source_p1: f64, batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(ObilError::InvalidConfig("BBSE batch size must be positive".into()));
        }
        let det = confusion[0][0] * confusion[1][1] - confusion[0][1] * confusion[1][0];
        if !(det.abs() > BBSE_DET_MIN) {
            return Err(ObilError::BbseUnidentifiable(det));
        }
        Ok(Self { confusion, qc, source_p1, batch_size, seen: 0, predicted_pos: 0, estimate_p1: source_p1 })
    }

    pub fn estimate_p1(&self) -> f64 {
        self.estimate_p1
    }

    /// Predicts with the current estimate and updates it from the
    /// source-threshold prediction.
    pub fn step(&mut self, log_lr: f64) -> Result<u8> {
        let pred = ShiftCorrection::Bbse { qc: self.qc, estimated_p1: self.estimate_p1 }.decide(log_lr);
        let source_pred = ShiftCorrection::None { qc: self.qc, train_p1: self.source_p1 }.decide(log_lr);
        self.seen += 1;
        self.predicted_pos += usize::from(source_pred);
        if self.seen == self.batch_size {
            let m1 = self.predicted_pos as f64 / self.seen as f64;
            self.estimate_p1 = bbse_estimate_prior(self.confusion, [1.0 - m1, m1], PRIOR_FLOOR)?.p1();
            self.seen = 0;
            self.predicted_pos = 0;
        }
        Ok(pred)
    }
}

//! Classification metrics, calibration error and temperature fitting.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bayes::sigmoid;
use crate::error::{ObilError, Result};
use crate::losses::softplus;

pub const DEFAULT_BINS: usize = 15;
pub const TEMPERATURE_RANGE: (f64, f64) = (0.05, 20.0);
pub const TEMPERATURE_TOL: f64 = 1e-4;

/// A metric value plus whether it was defined. Undefined metrics carry 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub defined: bool,
}

impl Metric {
    pub fn defined(value: f64) -> Self {
        Self { value, defined: true }
    }

    pub fn undefined() -> Self {
        Self { value: 0.0, defined: false }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    pub fn from_predictions(preds: &[u8], labels: &[u8]) -> Result<Self> {
        if preds.len() != labels.len() {
            return Err(ObilError::Shape { expected: labels.len(), got: preds.len() });
        }
        let mut c = Self::default();
        for (&p, &y) in preds.iter().zip(labels) {
            c.record(p, y);
        }
        Ok(c)
    }

    pub fn record(&mut self, pred: u8, label: u8) {
        match (pred == 1, label == 1) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// `2tp / (2tp + fp + fn)`.
pub fn f1(c: &ConfusionCounts) -> Metric {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        return Metric::undefined();
    }
    Metric::defined(2.0 * c.tp as f64 / denom as f64)
}

/// Geometric mean of sensitivity and specificity.
pub fn g_mean(c: &ConfusionCounts) -> Metric {
    let pos = c.tp + c.fn_;
    let neg = c.tn + c.fp;
    if pos == 0 || neg == 0 {
        return Metric::undefined();
    }
    let sens = c.tp as f64 / pos as f64;
    let spec = c.tn as f64 / neg as f64;
    Metric::defined((sens * spec).sqrt())
}

/// Area under the step precision-recall curve. Scores are swept in
/// descending order with tied scores entering together.
pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<Metric> {
    if scores.len() != labels.len() {
        return Err(ObilError::Shape { expected: labels.len(), got: scores.len() });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(ObilError::NonFinite("score".into()));
    }
    let total_pos = labels.iter().filter(|&&y| y == 1).count();
    if total_pos == 0 {
        return Ok(Metric::undefined());
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let mut group_pos = 0;
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                group_pos += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        tp += group_pos;
        if group_pos > 0 {
            let precision = tp as f64 / (tp + fp) as f64;
            area += precision * (group_pos as f64 / total_pos as f64);
        }
    }
    Ok(Metric::defined(area))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
    pub confidence: f64,
    pub accuracy: f64,
}

/// Equal-width bin for a confidence; bins are right-closed except the first.
fn bin_index(c: f64, bins: usize) -> usize {
    let idx = (c * bins as f64).ceil() as isize - 1;
    idx.clamp(0, bins as isize - 1) as usize
}

pub fn reliability_bins(confidences: &[f64], correct: &[bool], bins: usize) -> Result<Vec<ReliabilityBin>> {
    if bins == 0 {
        return Err(ObilError::InvalidConfig("bin count must be positive".into()));
    }
    if confidences.len() != correct.len() {
        return Err(ObilError::Shape { expected: correct.len(), got: confidences.len() });
    }
    if confidences.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(ObilError::InvalidConfig("confidences must lie in [0, 1]".into()));
    }
    let mut sum_conf = vec![0.0; bins];
    let mut sum_acc = vec![0usize; bins];
    let mut count = vec![0usize; bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = bin_index(c, bins);
        count[b] += 1;
        sum_conf[b] += c;
        sum_acc[b] += usize::from(ok);
    }
    Ok((0..bins)
        .map(|b| {
            let n = count[b];
            let (confidence, accuracy) =
                if n == 0 { (0.0, 0.0) } else { (sum_conf[b] / n as f64, sum_acc[b] as f64 / n as f64) };
            ReliabilityBin { low: b as f64 / bins as f64, high: (b + 1) as f64 / bins as f64, count: n, confidence, accuracy }
        })
        .collect())
}

/// Expected calibration error over `bins` equal-width bins.
pub fn ece(confidences: &[f64], correct: &[bool], bins: usize) -> Result<Metric> {
    let table = reliability_bins(confidences, correct, bins)?;
    if confidences.is_empty() {
        return Ok(Metric::undefined());
    }
    Ok(Metric::defined(ece_from_bins(&table)))
}

pub fn ece_from_bins(table: &[ReliabilityBin]) -> f64 {
    let n: usize = table.iter().map(|b| b.count).sum();
    if n == 0 {
        return 0.0;
    }
    table.iter().map(|b| b.count as f64 / n as f64 * (b.accuracy - b.confidence).abs()).sum()
}

/// Top-label confidence and correctness for binary posteriors
/// `P(y=1|x)`; the predicted label is 1 iff the posterior exceeds 0.5.
pub fn binary_confidence(posteriors: &[f64], labels: &[u8]) -> (Vec<f64>, Vec<bool>) {
    posteriors
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let pred = u8::from(p > 0.5);
            (p.max(1.0 - p), pred == y)
        })
        .unzip()
}

pub fn binary_ece(posteriors: &[f64], labels: &[u8], bins: usize) -> Result<Metric> {
    if posteriors.len() != labels.len() {
        return Err(ObilError::Shape { expected: labels.len(), got: posteriors.len() });
    }
    let (conf, correct) = binary_confidence(posteriors, labels);
    ece(&conf, &correct, bins)
}

/// Delimited reliability table with a header row.
pub fn reliability_csv(table: &[ReliabilityBin]) -> String {
    let mut out = String::from("bin_low,bin_high,count,conf,acc\n");
    for b in table {
        let _ = writeln!(out, "{},{},{},{},{}", b.low, b.high, b.count, b.confidence, b.accuracy);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub temperature: f64,
    pub nll: f64,
    /// The optimum sits at an edge of the search range.
    pub at_boundary: bool,
}

/// Mean cross-entropy of `σ(z/T + offset)` against the labels.
fn mean_nll(logits: &[f64], offsets: Option<&[f64]>, labels: &[u8], t: f64) -> f64 {
    let total: f64 = logits
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            let s = z / t + offsets.map_or(0.0, |o| o[i]);
            if labels[i] == 1 {
                softplus(-s)
            } else {
                softplus(s)
            }
        })
        .sum();
    total / logits.len() as f64
}

/// Temperature minimising the mean sigmoid cross-entropy, by golden-section
/// search over `[0.05, 20]`.
pub fn fit_temperature(logits: &[f64], labels: &[u8]) -> Result<TemperatureFit> {
    fit_temperature_with_offsets(logits, None, labels)
}

/// As [`fit_temperature`], with a fixed per-sample additive log-odds offset
/// applied after scaling (used when the logits were learned under a
/// different class prior than the calibration data).
pub fn fit_temperature_with_offsets(logits: &[f64], offsets: Option<&[f64]>, labels: &[u8]) -> Result<TemperatureFit> {
    if logits.len() != labels.len() || offsets.is_some_and(|o| o.len() != logits.len()) {
        return Err(ObilError::Shape { expected: labels.len(), got: logits.len() });
    }
    if logits.iter().chain(offsets.unwrap_or(&[])).any(|v| !v.is_finite()) {
        return Err(ObilError::NonFinite("logit".into()));
    }
    let n1 = labels.iter().filter(|&&y| y == 1).count();
    if n1 == 0 || n1 == labels.len() {
        return Err(ObilError::FitFailure("temperature fit needs both classes".into()));
    }
    let f = |t: f64| mean_nll(logits, offsets, labels, t);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = TEMPERATURE_RANGE;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > TEMPERATURE_TOL {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let temperature = (a + b) / 2.0;
    let edge = 10.0 * TEMPERATURE_TOL;
    let at_boundary = temperature - TEMPERATURE_RANGE.0 < edge || TEMPERATURE_RANGE.1 - temperature < edge;
    Ok(TemperatureFit { temperature, nll: f(temperature), at_boundary })
}

/// Posterior `σ(z / T)`.
pub fn scaled_posterior(z: f64, temperature: f64) -> f64 {
    sigmoid(z / temperature)
}

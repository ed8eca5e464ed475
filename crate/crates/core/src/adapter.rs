//! Online prior and threshold adaptation on an unlabeled stream.
//!
//! Each step predicts with the current threshold, then forms two prior
//! signals: the stream-average posterior implied by the current estimate
//! (`p_lr`) and the windowed fraction of instances with `q^_L > 1`
//! (`p_freq`, exact ties counting one half). Their mix `p_comb` moves the estimate either by a gated EMA
//! step (when close to the estimate) or by a fixed clamp step.

use std::collections::VecDeque;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::bayes::{sigmoid, PRIOR_FLOOR};
use crate::ensemble::LogLrSource;
use crate::error::{ObilError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterConfig {
    #[serde(default = "one")]
    pub qc: f64,
    #[serde(default = "half")]
    pub initial_p1: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_delta_max")]
    pub delta_max: f64,
    #[serde(default = "default_window")]
    pub window_w: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn default_alpha() -> f64 {
    0.05
}
fn default_gamma() -> f64 {
    0.9
}
fn default_beta() -> f64 {
    0.6
}
fn default_delta_max() -> f64 {
    0.02
}
fn default_window() -> usize {
    100
}
fn default_eta() -> f64 {
    PRIOR_FLOOR
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            qc: one(),
            initial_p1: half(),
            alpha: default_alpha(),
            gamma: default_gamma(),
            beta: default_beta(),
            delta_max: default_delta_max(),
            window_w: default_window(),
            eta: default_eta(),
        }
    }
}

impl AdapterConfig {
    pub fn validate(&self) -> Result<()> {
        let open01 = |v: f64| v > 0.0 && v < 1.0;
        let bad = |what: &str| Err(ObilError::InvalidConfig(format!("adapter {what} out of range")));
        if !(self.qc.is_finite() && self.qc > 0.0) {
            return bad("qc");
        }
        if !(0.0..=1.0).contains(&self.initial_p1) {
            return bad("initial_p1");
        }
        if !open01(self.alpha) {
            return bad("alpha");
        }
        if !(self.gamma > 0.5 && self.gamma < 1.0) {
            return bad("gamma");
        }
        if !open01(self.beta) {
            return bad("beta");
        }
        if !open01(self.delta_max) {
            return bad("delta_max");
        }
        if self.window_w == 0 {
            return bad("window_w");
        }
        if !(self.eta > 0.0 && self.eta < 0.5) {
            return bad("eta");
        }
        Ok(())
    }
}

/// One adapter step, as emitted in traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u64,
    pub log_lr: f64,
    pub prediction: u8,
    pub threshold_before: f64,
    pub p_lr: f64,
    pub p_freq: f64,
    pub p_comb: f64,
    pub updated: bool,
    pub clamped: bool,
    pub p1_hat_after: f64,
    pub threshold_after: f64,
}

impl StepRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("finite record serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineAdapter {
    config: AdapterConfig,
    p1_hat: f64,
    qp_hat: f64,
    threshold: f64,
    /// Window entries in half-units: 2 for `q^ > 1`, 1 for a tie, 0 below.
    window: VecDeque<u8>,
    window_hits: usize,
    t: u64,
}

impl OnlineAdapter {
    pub fn new(config: AdapterConfig) -> Result<Self> {
        config.validate()?;
        let mut s = Self {
            p1_hat: 0.0,
            qp_hat: 0.0,
            threshold: 0.0,
            window: VecDeque::with_capacity(config.window_w),
            window_hits: 0,
            t: 0,
            config,
        };
        s.set_p1(s.config.initial_p1);
        Ok(s)
    }

    fn set_p1(&mut self, p1: f64) {
        let eta = self.config.eta;
        self.p1_hat = p1.clamp(eta, 1.0 - eta);
        self.qp_hat = (1.0 - self.p1_hat) / self.p1_hat;
        self.threshold = self.config.qc * self.qp_hat;
    }

    pub fn config(&self) -> &AdapterConfig {
        &self.config
    }

    pub fn p1_hat(&self) -> f64 {
        self.p1_hat
    }

    pub fn qp_hat(&self) -> f64 {
        self.qp_hat
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Mean of the window, or the initial prior while it is empty.
    pub fn p_freq(&self) -> f64 {
        if self.window.is_empty() {
            self.config.initial_p1
        } else {
            self.window_hits as f64 / (2 * self.window.len()) as f64
        }
    }

    /// Prior update from an externally supplied combined signal; the
    /// update half of [`OnlineAdapter::step`]. Returns `(updated, clamped)`.
    pub fn apply_combined(&mut self, p_comb: f64) -> (bool, bool) {
        let c = &self.config;
        let diff = p_comb - self.p1_hat;
        let (next, updated, clamped) = if diff.abs() < c.delta_max {
            if p_comb > c.gamma || p_comb < 1.0 - c.gamma {
                (c.alpha * p_comb + (1.0 - c.alpha) * self.p1_hat, true, false)
            } else {
                (self.p1_hat, false, false)
            }
        } else {
            (self.p1_hat + diff.signum() * c.delta_max, true, true)
        };
        self.set_p1(next);
        (updated, clamped)
    }

    /// Consumes one log-likelihood ratio.
    pub fn step(&mut self, log_lr: f64) -> Result<StepRecord> {
        if !log_lr.is_finite() {
            return Err(ObilError::NonFinite(format!("log_lr {log_lr}")));
        }
        self.t += 1;
        let threshold_before = self.threshold;
        let prediction = u8::from(log_lr.exp() > threshold_before);
        let p_lr = sigmoid(log_lr - self.qp_hat.ln());

        let hit = match log_lr.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => 2,
            Some(std::cmp::Ordering::Equal) => 1,
            _ => 0,
        };
        if self.window.len() == self.config.window_w {
            self.window_hits -= usize::from(self.window.pop_front().unwrap_or(0));
        }
        self.window.push_back(hit);
        self.window_hits += usize::from(hit);
        let p_freq = self.p_freq();

        let p_comb = self.config.beta * p_lr + (1.0 - self.config.beta) * p_freq;
        let (updated, clamped) = self.apply_combined(p_comb);
        Ok(StepRecord {
            t: self.t,
            log_lr,
            prediction,
            threshold_before,
            p_lr,
            p_freq,
            p_comb,
            updated,
            clamped,
            p1_hat_after: self.p1_hat,
            threshold_after: self.threshold,
        })
    }
}

/// Scores every input with `source` and feeds the adapter in order.
pub fn run_stream<'a, I>(
    source: &dyn LogLrSource,
    stream: I,
    config: &AdapterConfig,
    rng: &mut dyn RngCore,
) -> Result<Vec<StepRecord>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut adapter = OnlineAdapter::new(config.clone())?;
    stream
        .into_iter()
        .map(|x| {
            let l = source.log_lr(x, rng)?;
            adapter.step(l)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn adapter(f: impl FnOnce(&mut AdapterConfig)) -> OnlineAdapter {
        let mut c = AdapterConfig::default();
        f(&mut c);
        OnlineAdapter::new(c).unwrap()
    }

    #[test]
    fn init_examples() {
        assert_eq!(adapter(|_| {}).threshold(), 1.0);
        assert!((adapter(|c| c.initial_p1 = 0.2).threshold() - 4.0).abs() < 1e-12);
        let a = adapter(|c| {
            c.initial_p1 = 0.0;
            c.qc = 3.0;
        });
        assert_eq!(a.p1_hat(), 0.005);
        assert!((a.threshold() - 199.0 * 3.0).abs() < 1e-9);
        assert_eq!(a.p_freq(), 0.0);
    }

    #[test]
    fn tie_predicts_zero() {
        let mut a = adapter(|_| {});
        let r = a.step(0.0).unwrap();
        assert_eq!(r.prediction, 0);
        assert_eq!(r.p_lr, 0.5);
    }

    #[test]
    fn ema_branch() {
        let mut a = adapter(|c| {
            c.alpha = 0.1;
            c.delta_max = 0.5;
        });
        let (updated, clamped) = a.apply_combined(0.95);
        assert!(updated && !clamped);
        assert!((a.p1_hat() - 0.545).abs() < 1e-12);
    }

    #[test]
    fn clamp_branch() {
        let mut a = adapter(|_| {});
        let (updated, clamped) = a.apply_combined(0.9);
        assert!(updated && clamped);
        assert!((a.p1_hat() - 0.52).abs() < 1e-12);
    }

    #[test]
    fn gate_blocks_unconfident_signal() {
        let mut a = adapter(|_| {});
        assert_eq!(a.apply_combined(0.51), (false, false));
        assert_eq!(a.p1_hat(), 0.5);
    }

    #[test]
    fn neutral_stream_is_fixed_point() {
        let mut a = adapter(|_| {});
        for _ in 0..1000 {
            let r = a.step(0.0).unwrap();
            assert!(!r.updated);
        }
        assert_eq!(a.p1_hat(), 0.5);
    }

    #[test]
    fn window_slides() {
        let mut a = adapter(|c| c.window_w = 3);
        for l in [1.0, 1.0, -1.0, -1.0] {
            a.step(l).unwrap();
        }
        assert!((a.p_freq() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(adapter(|_| {}).step(f64::NAN).is_err());
        assert!(OnlineAdapter::new(AdapterConfig { gamma: 0.5, ..AdapterConfig::default() }).is_err());
    }

    #[test]
    fn record_serializes_as_json_line() {
        let r = adapter(|_| {}).step(0.25).unwrap().to_json_line();
        assert!(r.starts_with("{\"t\":1,\"log_lr\":0.25,"));
        assert!(!r.contains('\n'));
    }
}

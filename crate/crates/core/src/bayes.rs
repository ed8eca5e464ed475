//! Closed-form Bayesian decision primitives.
//!
//! A binary decision with likelihood ratio `q_L(x) = p(x|y=1) / p(x|y=0)`
//! predicts the positive class iff `q_L(x) > Q_C * Q_P`, where `Q_C` is the
//! cost ratio and `Q_P = P_0 / P_1` the imbalance ratio. Everything here is a
//! pure function.

use serde::{Deserialize, Serialize};

use crate::error::{ObilError, Result};

/// Scorer outputs are clamped into `[-1 + OUTPUT_CLIP, 1 - OUTPUT_CLIP]`
/// before any ratio is formed.
pub const OUTPUT_CLIP: f64 = 1e-6;

/// Default floor for prior estimates; keeps `Q_P <= 199`.
pub const PRIOR_FLOOR: f64 = 0.005;

/// `c_ij` is the cost of predicting class `i` when the truth is `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostStructure {
    pub c00: f64,
    pub c01: f64,
    pub c10: f64,
    pub c11: f64,
}

impl CostStructure {
    pub fn new(c00: f64, c01: f64, c10: f64, c11: f64) -> Result<Self> {
        let costs = Self { c00, c01, c10, c11 };
        costs.validate()?;
        Ok(costs)
    }

    /// Plain 0/1 misclassification costs (`Q_C = 1`).
    pub fn zero_one() -> Self {
        Self { c00: 0.0, c01: 1.0, c10: 1.0, c11: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.c00, self.c01, self.c10, self.c11];
        if all.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(ObilError::InvalidCostStructure(
                "costs must be finite and nonnegative".into(),
            ));
        }
        if self.c01 == self.c11 {
            return Err(ObilError::InvalidCostStructure("c01 == c11".into()));
        }
        if !(self.c10 > self.c00 && self.c01 > self.c11) {
            return Err(ObilError::InvalidCostStructure(
                "error costs must exceed correct-decision costs".into(),
            ));
        }
        Ok(())
    }

    /// `Q_C = (c10 - c00) / (c01 - c11)`.
    pub fn cost_ratio(&self) -> Result<f64> {
        self.validate()?;
        Ok((self.c10 - self.c00) / (self.c01 - self.c11))
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        Self {
            c00: self.c00 * lambda,
            c01: self.c01 * lambda,
            c10: self.c10 * lambda,
            c11: self.c11 * lambda,
        }
    }

    /// Expected cost of predicting `pred` when `P(y=1|x) = posterior`.
    pub fn expected_cost(&self, pred: u8, posterior: f64) -> f64 {
        if pred == 1 {
            self.c11 * posterior + self.c10 * (1.0 - posterior)
        } else {
            self.c01 * posterior + self.c00 * (1.0 - posterior)
        }
    }
}

/// Class priors with `p1` the minority/positive class probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorPair {
    p1: f64,
}

impl PriorPair {
    /// Builds a prior pair with the default floor [`PRIOR_FLOOR`].
    pub fn new(p1: f64) -> Result<Self> {
        Self::with_floor(p1, PRIOR_FLOOR)
    }

    /// Requires `p1 ∈ [floor, 1 - floor]`.
    pub fn with_floor(p1: f64, floor: f64) -> Result<Self> {
        if !(p1.is_finite() && p1 >= floor && p1 <= 1.0 - floor) {
            return Err(ObilError::InvalidPrior(format!(
                "p1={p1} outside [{floor}, {}]",
                1.0 - floor
            )));
        }
        Ok(Self { p1 })
    }

    /// Clips `p1` into `[floor, 1 - floor]` instead of rejecting it.
    pub fn clipped(p1: f64, floor: f64) -> Self {
        let p1 = if p1.is_nan() { 0.5 } else { p1 };
        Self { p1: p1.clamp(floor, 1.0 - floor) }
    }

    /// Prior pair whose imbalance ratio `P_0/P_1` equals `qp`.
    pub fn from_imbalance_ratio(qp: f64) -> Result<Self> {
        if !(qp.is_finite() && qp > 0.0) {
            return Err(ObilError::InvalidPrior(format!("imbalance ratio {qp} must be positive")));
        }
        Self::new(1.0 / (1.0 + qp))
    }

    pub fn p1(&self) -> f64 {
        self.p1
    }

    pub fn p0(&self) -> f64 {
        1.0 - self.p1
    }

    /// `Q_P = P_0 / P_1`.
    pub fn imbalance_ratio(&self) -> f64 {
        (1.0 - self.p1) / self.p1
    }
}

/// Natural log of a likelihood ratio.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct LogLikelihoodRatio(pub f64);

impl LogLikelihoodRatio {
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn ratio(self) -> f64 {
        self.0.exp()
    }
}

/// Bayes threshold `Q = Q_C * Q_P`; predict 1 iff `q_L(x) > Q`.
pub fn combined_threshold(costs: &CostStructure, priors: &PriorPair) -> Result<f64> {
    Ok(costs.cost_ratio()? * priors.imbalance_ratio())
}

/// Strict-inequality decision; a tie predicts 0.
pub fn decide(likelihood_ratio: f64, threshold: f64) -> u8 {
    u8::from(likelihood_ratio > threshold)
}

/// Maps a tanh-bounded output to `P(y=1|x) = (o + 1) / 2`.
pub fn posterior_from_output(o: f64) -> Result<f64> {
    if !(o.abs() < 1.0) {
        return Err(ObilError::UnclampedOutput(o));
    }
    Ok((o + 1.0) / 2.0)
}

/// Recovers `q_L = Q~_P * p / (1 - p)` from a posterior learned at imbalance
/// ratio `training_qp`.
pub fn lr_from_posterior(p_hat: f64, training_qp: f64) -> Result<f64> {
    if !(p_hat > 0.0 && p_hat < 1.0) {
        return Err(ObilError::PosteriorSaturation(p_hat));
    }
    Ok(training_qp * p_hat / (1.0 - p_hat))
}

/// Clamps a scorer output into the closed interval used for ratio math.
pub fn clamp_output(o: f64) -> f64 {
    o.clamp(-1.0 + OUTPUT_CLIP, 1.0 - OUTPUT_CLIP)
}

/// `q_L = Q~_P * (1 + o) / (1 - o)` on a clamped output, evaluated through
/// the posterior so both conversion paths agree bit for bit.
pub fn lr_from_output(o: f64, training_qp: f64) -> f64 {
    let p = (clamp_output(o) + 1.0) / 2.0;
    training_qp * p / (1.0 - p)
}

/// `ln q_L` for a clamped output, computed without forming the ratio.
pub fn log_lr_from_output(o: f64, training_qp: f64) -> f64 {
    let o = clamp_output(o);
    training_qp.ln() + (1.0 + o).ln() - (1.0 - o).ln()
}

/// Sensitivity of the recovered ratio to a posterior error `eps`:
/// `eps / (p (1 - p) - eps (1 - 2p))`. Smallest near `p = 0.5`.
///
/// This dominates the realized error only for `p <= 1/3`; use
/// [`worst_case_relative_lr_error`] for a bound that holds everywhere.
pub fn relative_lr_error_bound(p_true: f64, eps: f64) -> Result<f64> {
    let eps = eps.abs();
    if !(p_true > 0.0 && p_true < 1.0) || eps >= p_true.min(1.0 - p_true) {
        return Err(ObilError::BoundUndefined { p: p_true, eps });
    }
    Ok(eps / (p_true * (1.0 - p_true) - eps * (1.0 - 2.0 * p_true)))
}

/// Largest `|q^ - q| / q` over posterior errors of magnitude `eps`:
/// `eps / (p (1 - p - eps))`, attained when the posterior is overestimated.
pub fn worst_case_relative_lr_error(p_true: f64, eps: f64) -> Result<f64> {
    let eps = eps.abs();
    if !(p_true > 0.0 && p_true < 1.0) || eps >= p_true.min(1.0 - p_true) {
        return Err(ObilError::BoundUndefined { p: p_true, eps });
    }
    Ok(eps / (p_true * (1.0 - p_true - eps)))
}

/// `Q_C` on a missed positive, 1 on a false alarm, 0 otherwise.
pub fn cost_sensitive_loss(pred: u8, truth: u8, qc: f64) -> f64 {
    match (pred, truth) {
        (0, 1) => qc,
        (1, 0) => 1.0,
        _ => 0.0,
    }
}

/// Expected [`cost_sensitive_loss`] of `pred` given `P(y=1|x) = posterior`.
pub fn expected_cost_sensitive_loss(pred: u8, posterior: f64, qc: f64) -> f64 {
    if pred == 1 {
        1.0 - posterior
    } else {
        qc * posterior
    }
}

/// Posterior `P(y=1|x)` from a log-likelihood ratio and prior `p1`.
pub fn posterior_from_log_lr(log_lr: f64, p1: f64) -> f64 {
    sigmoid(log_lr + p1.ln() - (1.0 - p1).ln())
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

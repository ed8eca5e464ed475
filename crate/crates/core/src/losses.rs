//! Registered training losses.
//!
//! Output-space losses take a tanh-bounded output `o ∈ (-1, 1)` and a target
//! `t ∈ {-1, +1}`. A loss is *Bregman-exact* when `∂C/∂o = -g(o)(t - o)` for a
//! positive `g`, which makes `E[t|x] = 2P(y=1|x) - 1` its population
//! minimizer. The sigmoid cross-entropy path works on unbounded logits and is
//! only approximately calibrated; pair it with temperature scaling.

use serde::{Deserialize, Serialize};

use crate::bayes::{sigmoid, OUTPUT_CLIP};
use crate::error::{ObilError, Result};

/// Loss value together with its derivative in the loss's own input variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub derivative: f64,
}

/// Static description of a registered loss.
#[derive(Debug, Clone, Copy)]
pub struct LossSpec {
    pub id: &'static str,
    pub bregman_exact: bool,
    pub g: Option<fn(f64) -> f64>,
}

pub const SQUARED: LossSpec = LossSpec { id: "squared", bregman_exact: true, g: Some(g_squared) };
pub const SQUARED_COSTWEIGHTED: LossSpec =
    LossSpec { id: "squared_costweighted", bregman_exact: false, g: None };
pub const LOGISTIC_ARCTANH: LossSpec =
    LossSpec { id: "logistic_arctanh", bregman_exact: true, g: Some(g_logistic) };
pub const XENT_SIGMOID: LossSpec = LossSpec { id: "xent_sigmoid", bregman_exact: false, g: None };

pub const REGISTRY: [LossSpec; 4] = [SQUARED, SQUARED_COSTWEIGHTED, LOGISTIC_ARCTANH, XENT_SIGMOID];

pub fn lookup(id: &str) -> Option<LossSpec> {
    REGISTRY.iter().copied().find(|s| s.id == id)
}

fn g_squared(_o: f64) -> f64 {
    1.0
}

fn g_logistic(o: f64) -> f64 {
    1.0 / (1.0 - o * o)
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `½(t - o)²`.
pub fn squared_error(o: f64, t: f64) -> LossEval {
    let r = t - o;
    LossEval { value: 0.5 * r * r, derivative: -r }
}

/// `(t - o)²` on positives and `q~c (t - o)²` on negatives.
pub fn cost_weighted_squared_error(o: f64, t: f64, qc_tilde: f64) -> Result<LossEval> {
    if !(qc_tilde.is_finite() && qc_tilde > 0.0) {
        return Err(ObilError::InvalidWeight(qc_tilde));
    }
    let w = if t > 0.0 { 1.0 } else { qc_tilde };
    let r = t - o;
    Ok(LossEval { value: w * r * r, derivative: -2.0 * w * r })
}

/// Logistic loss on the arctanh-reparameterized output,
/// `ln(1 + exp(-2t·arctanh(o)))`, so that `σ(2·arctanh(o)) = (1 + o)/2`.
pub fn logistic_arctanh(o: f64, t: f64) -> Result<LossEval> {
    if !(o.abs() <= 1.0 - OUTPUT_CLIP) {
        return Err(ObilError::UnclampedOutput(o));
    }
    // 2·arctanh(o), written out to avoid depending on a special-function impl
    let two_a = ((1.0 + o) / (1.0 - o)).ln();
    let value = softplus(-t * two_a);
    let derivative = -2.0 * t * sigmoid(-t * two_a) / (1.0 - o * o);
    Ok(LossEval { value, derivative })
}

/// Sigmoid cross-entropy on logit `z` at temperature `temperature`;
/// the derivative is with respect to `z`.
pub fn cross_entropy_sigmoid(z: f64, y: u8, temperature: f64) -> LossEval {
    let s = z / temperature;
    let value = if y == 1 { softplus(-s) } else { softplus(s) };
    let derivative = (sigmoid(s) - f64::from(y)) / temperature;
    LossEval { value, derivative }
}

/// A loss selected for training, with its parameters resolved.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Squared,
    #[serde(rename = "squared_costweighted")]
    SquaredCostWeighted {
        qc_tilde: f64,
    },
    LogisticArctanh,
    XentSigmoid,
}

impl LossKind {
    /// Resolves a registered identifier; `cost_weight` only matters for
    /// `squared_costweighted`.
    pub fn from_id(id: &str, cost_weight: f64) -> Result<Self> {
        match id {
            "squared" => Ok(Self::Squared),
            "squared_costweighted" => {
                if !(cost_weight.is_finite() && cost_weight > 0.0) {
                    return Err(ObilError::InvalidWeight(cost_weight));
                }
                Ok(Self::SquaredCostWeighted { qc_tilde: cost_weight })
            }
            "logistic_arctanh" => Ok(Self::LogisticArctanh),
            "xent_sigmoid" => Ok(Self::XentSigmoid),
            other => Err(ObilError::InvalidConfig(format!("unknown loss '{other}'"))),
        }
    }

    pub fn id(&self) -> &'static str {
        self.spec().id
    }

    pub fn spec(&self) -> LossSpec {
        match self {
            Self::Squared => SQUARED,
            Self::SquaredCostWeighted { .. } => SQUARED_COSTWEIGHTED,
            Self::LogisticArctanh => LOGISTIC_ARCTANH,
            Self::XentSigmoid => XENT_SIGMOID,
        }
    }

    /// Factor by which the learned posterior odds are deflated relative to
    /// the data's own; folded into the scorer's `training_qp`.
    pub fn odds_deflation(&self) -> f64 {
        match self {
            Self::SquaredCostWeighted { qc_tilde } => *qc_tilde,
            _ => 1.0,
        }
    }

    /// Loss in output space for `o ∈ (-1, 1)` and `t ∈ {-1, +1}`.
    /// The cross-entropy path maps `o` back to its logit `2·arctanh(o)`.
    pub fn eval_output(&self, o: f64, t: f64) -> Result<LossEval> {
        match self {
            Self::Squared => Ok(squared_error(o, t)),
            Self::SquaredCostWeighted { qc_tilde } => cost_weighted_squared_error(o, t, *qc_tilde),
            Self::LogisticArctanh => logistic_arctanh(o, t),
            Self::XentSigmoid => {
                if !(o.abs() <= 1.0 - OUTPUT_CLIP) {
                    return Err(ObilError::UnclampedOutput(o));
                }
                let z = ((1.0 + o) / (1.0 - o)).ln();
                let e = cross_entropy_sigmoid(z, u8::from(t > 0.0), 1.0);
                Ok(LossEval { value: e.value, derivative: e.derivative * 2.0 / (1.0 - o * o) })
            }
        }
    }

    /// Loss and derivative with respect to the network's final
    /// pre-activation `a`, where the output is `tanh(a)` and the logit is `2a`.
    pub fn eval_pre_activation(&self, a: f64, label: u8) -> LossEval {
        let t = if label == 1 { 1.0 } else { -1.0 };
        match self {
            Self::XentSigmoid => {
                let e = cross_entropy_sigmoid(2.0 * a, label, 1.0);
                LossEval { value: e.value, derivative: 2.0 * e.derivative }
            }
            Self::Squared => {
                let o = a.tanh();
                let e = squared_error(o, t);
                LossEval { value: e.value, derivative: e.derivative * (1.0 - o * o) }
            }
            Self::SquaredCostWeighted { qc_tilde } => {
                let o = a.tanh();
                let w = if label == 1 { 1.0 } else { *qc_tilde };
                let r = t - o;
                LossEval { value: w * r * r, derivative: -2.0 * w * r * (1.0 - o * o) }
            }
            Self::LogisticArctanh => {
                let o = a.tanh().clamp(-1.0 + OUTPUT_CLIP, 1.0 - OUTPUT_CLIP);
                let e = logistic_arctanh(o, t).expect("clamped output");
                LossEval { value: e.value, derivative: e.derivative * (1.0 - o * o) }
            }
        }
    }
}

//! Ensembles of scorers trained on associated problems at several imbalance
//! ratios, fused per query in log-likelihood-ratio space.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{log_lr_from_output, LogLikelihoodRatio};
use crate::dataset::LabeledDataset;
use crate::error::{ObilError, Result};
use crate::losses::LossKind;
use crate::metrics::fit_temperature_with_offsets;
use crate::mlp::{self, CalibratedScorer, NetworkConfig, TrainingConfig};
use crate::resampling::{make_associated, AssociatedProblemSpec, ResampleMethod};

const SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// Anything that yields `ln q^_L(x)` for a feature vector.
pub trait LogLrSource: Sync {
    fn log_lr(&self, x: &[f64], rng: &mut dyn RngCore) -> Result<f64>;
}

impl LogLrSource for CalibratedScorer {
    fn log_lr(&self, x: &[f64], _rng: &mut dyn RngCore) -> Result<f64> {
        CalibratedScorer::log_lr(self, x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    /// `None` means `[1, 2, 5, 10, Q_P]` with `Q_P` the training data's ratio.
    #[serde(default)]
    pub target_qps: Option<Vec<f64>>,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_mc")]
    pub mc_samples: usize,
    #[serde(default = "default_cal_fraction")]
    pub calibration_fraction: f64,
    #[serde(default = "default_method")]
    pub method: ResampleMethod,
}

fn default_k() -> usize {
    5
}
fn default_tau() -> f64 {
    1.0
}
fn default_mc() -> usize {
    30
}
fn default_cal_fraction() -> f64 {
    0.15
}
fn default_method() -> ResampleMethod {
    ResampleMethod::Undersample
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            k: default_k(),
            target_qps: None,
            tau: default_tau(),
            mc_samples: default_mc(),
            calibration_fraction: default_cal_fraction(),
            method: default_method(),
        }
    }
}

impl EnsembleConfig {
    pub fn with_targets(target_qps: Vec<f64>) -> Self {
        Self { k: target_qps.len(), target_qps: Some(target_qps), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(ObilError::InvalidConfig("ensemble needs at least one member".into()));
        }
        if let Some(t) = &self.target_qps {
            if t.len() != self.k {
                return Err(ObilError::InvalidConfig(format!("{} target ratios for k={}", t.len(), self.k)));
            }
            if t.iter().any(|q| !(q.is_finite() && *q > 0.0)) {
                return Err(ObilError::InvalidConfig("target ratios must be positive".into()));
            }
        } else if self.k != 5 {
            return Err(ObilError::InvalidConfig("default target ratios need k=5".into()));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(ObilError::InvalidConfig(format!("tau {} must be positive", self.tau)));
        }
        if self.mc_samples < 2 {
            return Err(ObilError::InvalidConfig("mc_samples must be at least 2".into()));
        }
        if !(self.calibration_fraction > 0.0 && self.calibration_fraction < 1.0) {
            return Err(ObilError::InvalidConfig("calibration_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn resolved_targets(&self, native_qp: f64) -> Vec<f64> {
        self.target_qps.clone().unwrap_or_else(|| vec![1.0, 2.0, 5.0, 10.0, native_qp])
    }
}

/// Seed of member `k` derived from the master seed.
pub fn member_seed(master: u64, k: usize) -> u64 {
    master ^ (k as u64 + 1).wrapping_mul(SEED_STRIDE)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodRatioEnsemble {
    pub config: EnsembleConfig,
    pub members: Vec<CalibratedScorer>,
}

/// Result of [`train_ensemble`]; `calibration` is the held-out split that
/// no member saw.
#[derive(Debug, Clone)]
pub struct TrainedEnsemble {
    pub ensemble: LikelihoodRatioEnsemble,
    pub calibration: LabeledDataset,
}

/// Trains one scorer per target ratio (in parallel), each on an associated
/// problem built from the non-calibration part of `dataset`.
///
/// Cross-entropy members get a temperature fitted on the calibration split.
pub fn train_ensemble(
    dataset: &LabeledDataset,
    cfg: &EnsembleConfig,
    net_cfg: &NetworkConfig,
    train_cfg: &TrainingConfig,
    loss: &LossKind,
    seed: u64,
) -> Result<TrainedEnsemble> {
    cfg.validate()?;
    if !dataset.has_both_classes() {
        return Err(ObilError::DegenerateData("ensemble training needs both classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cf = cfg.calibration_fraction;
    let mut parts = dataset.stratified_split(&[1.0 - cf, cf], &mut rng)?;
    let calibration = parts.pop().expect("two parts");
    let fit_set = parts.pop().expect("two parts");
    let targets = cfg.resolved_targets(fit_set.imbalance_ratio());

    let members = targets
        .par_iter()
        .enumerate()
        .map(|(k, &target)| {
            let s = member_seed(seed, k);
            let spec = AssociatedProblemSpec::new(target, cfg.method, s);
            let assoc = make_associated(&fit_set, &spec)?;
            let member_cfg = NetworkConfig { seed: s, ..net_cfg.clone() };
            let mut scorer = mlp::train(&assoc, &member_cfg, train_cfg, loss)?;
            if matches!(loss, LossKind::XentSigmoid) {
                fit_member_temperature(&mut scorer, &calibration)?;
            }
            Ok(scorer)
        })
        .collect::<Result<Vec<_>>>()?;

    let config = EnsembleConfig { k: members.len(), target_qps: Some(targets), ..cfg.clone() };
    Ok(TrainedEnsemble { ensemble: LikelihoodRatioEnsemble { config, members }, calibration })
}

/// Fits `scorer.temperature` on held-out data drawn at a (possibly)
/// different imbalance ratio than the scorer's training data.
pub fn fit_member_temperature(scorer: &mut CalibratedScorer, calibration: &LabeledDataset) -> Result<()> {
    let logits = calibration.iter().map(|(x, _)| scorer.logit(x)).collect::<Result<Vec<_>>>()?;
    let shift = (scorer.training_qp / calibration.imbalance_ratio()).ln();
    let offsets = vec![shift; logits.len()];
    let fit = fit_temperature_with_offsets(&logits, Some(&offsets), calibration.labels())?;
    scorer.temperature = fit.temperature;
    Ok(())
}

/// `ln q^_L(x)` from one member's clamped output and its training ratio.
pub fn member_log_lr(member: &CalibratedScorer, x: &[f64]) -> Result<LogLikelihoodRatio> {
    Ok(LogLikelihoodRatio(log_lr_from_output(member.forward(x)?, member.training_qp)))
}

/// `softmax(-σ²/τ)`. Infinite variances get zero weight; if every variance
/// is infinite the weights are uniform.
pub fn softmax_weights(variances: &[f64], tau: f64) -> Result<Vec<f64>> {
    if variances.is_empty() {
        return Err(ObilError::InvalidConfig("no members to weight".into()));
    }
    if variances.iter().any(|v| v.is_nan() || *v < 0.0) {
        return Err(ObilError::NonFinite("member variance".into()));
    }
    let min = variances.iter().copied().fold(f64::INFINITY, f64::min);
    if min.is_infinite() {
        return Ok(vec![1.0 / variances.len() as f64; variances.len()]);
    }
    let raw: Vec<f64> = variances.iter().map(|v| (-(v - min) / tau).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Weighted mean of log-ratios (a weighted geometric mean of the ratios).
pub fn weighted_log_fusion(weights: &[f64], log_lrs: &[f64]) -> f64 {
    weights.iter().zip(log_lrs).map(|(w, l)| w * l).sum()
}

impl LikelihoodRatioEnsemble {
    pub fn input_dim(&self) -> usize {
        self.members[0].input_dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.members.len() != self.config.k {
            return Err(ObilError::Decode(format!("{} members for k={}", self.members.len(), self.config.k)));
        }
        for m in &self.members {
            m.validate()?;
            if m.input_dim() != self.members[0].input_dim() {
                return Err(ObilError::Decode("members disagree on input dimension".into()));
            }
        }
        Ok(())
    }

    pub fn member_log_lrs(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.members.iter().map(|m| member_log_lr(m, x).map(|l| l.0)).collect()
    }

    /// MC-dropout variance of every member's log-ratio, drawing from `rng`
    /// member by member.
    pub fn member_variances(&self, x: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        self.members
            .iter()
            .map(|m| mlp::mc_dropout_log_lr_variance(m, x, self.config.mc_samples, rng))
            .collect()
    }

    pub fn fusion_weights(&self, x: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        softmax_weights(&self.member_variances(x, rng)?, self.config.tau)
    }

    pub fn fused_log_lr(&self, x: &[f64], rng: &mut dyn RngCore) -> Result<LogLikelihoodRatio> {
        if self.members.len() == 1 {
            return member_log_lr(&self.members[0], x);
        }
        let w = self.fusion_weights(x, rng)?;
        Ok(LogLikelihoodRatio(weighted_log_fusion(&w, &self.member_log_lrs(x)?)))
    }
}

impl LogLrSource for LikelihoodRatioEnsemble {
    fn log_lr(&self, x: &[f64], rng: &mut dyn RngCore) -> Result<f64> {
        self.fused_log_lr(x, rng).map(|l| l.0)
    }
}

//! Synthetic Gaussian problems with exact likelihood ratios, prior-shift
//! stream scenarios, the oracle policy and regret accounting.

use std::fmt::Write as _;

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::adapter::{AdapterConfig, OnlineAdapter, StepRecord};
use crate::bayes::{cost_sensitive_loss, expected_cost_sensitive_loss, posterior_from_log_lr, PRIOR_FLOOR};
use crate::dataset::LabeledDataset;
use crate::ensemble::LogLrSource;
use crate::error::{ObilError, Result};

/// Two isotropic Gaussian classes with shared variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianProblem {
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub variance: f64,
}

impl Default for GaussianProblem {
    fn default() -> Self {
        Self { mu0: vec![-1.0], mu1: vec![1.0], variance: 1.0 }
    }
}

impl GaussianProblem {
    pub fn validate(&self) -> Result<()> {
        if self.mu0.is_empty() || self.mu0.len() != self.mu1.len() {
            return Err(ObilError::InvalidConfig("class means must share a positive dimension".into()));
        }
        if self.mu0.iter().chain(&self.mu1).any(|v| !v.is_finite()) {
            return Err(ObilError::InvalidConfig("class means must be finite".into()));
        }
        if !(self.variance.is_finite() && self.variance > 0.0) {
            return Err(ObilError::InvalidConfig("variance must be positive".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    /// `ln q_L(x) = (‖x − μ0‖² − ‖x − μ1‖²) / (2σ²)`.
    pub fn log_lr(&self, x: &[f64]) -> f64 {
        let d0: f64 = x.iter().zip(&self.mu0).map(|(a, m)| (a - m) * (a - m)).sum();
        let d1: f64 = x.iter().zip(&self.mu1).map(|(a, m)| (a - m) * (a - m)).sum();
        (d0 - d1) / (2.0 * self.variance)
    }

    pub fn sample_x<R: Rng + ?Sized>(&self, y: u8, rng: &mut R) -> Vec<f64> {
        let mu = if y == 1 { &self.mu1 } else { &self.mu0 };
        let sd = self.variance.sqrt();
        mu.iter().map(|m| m + sd * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    /// `n` draws with labels `~ Bernoulli(p1)`.
    pub fn sample_dataset<R: Rng + ?Sized>(&self, n: usize, p1: f64, rng: &mut R) -> Result<LabeledDataset> {
        let mut features = Vec::with_capacity(n * self.dim());
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let y = u8::from(rng.random::<f64>() < p1);
            features.extend(self.sample_x(y, rng));
            labels.push(y);
        }
        LabeledDataset::new(self.dim(), features, labels)
    }

    /// Exactly `n0` negatives followed by `n1` positives.
    pub fn sample_counts<R: Rng + ?Sized>(&self, n0: usize, n1: usize, rng: &mut R) -> Result<LabeledDataset> {
        let mut features = Vec::with_capacity((n0 + n1) * self.dim());
        let mut labels = Vec::with_capacity(n0 + n1);
        for (y, n) in [(0u8, n0), (1u8, n1)] {
            for _ in 0..n {
                features.extend(self.sample_x(y, rng));
                labels.push(y);
            }
        }
        LabeledDataset::new(self.dim(), features, labels)
    }
}

impl LogLrSource for GaussianProblem {
    fn log_lr(&self, x: &[f64], _rng: &mut dyn RngCore) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(ObilError::Shape { expected: self.dim(), got: x.len() });
        }
        Ok(GaussianProblem::log_lr(self, x))
    }
}

fn default_decay() -> u64 {
    1000
}

/// Minority prior as a function of the (0-based) step index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorTrajectory {
    Constant {
        p: f64,
    },
    /// Jumps to `p_after` at `t_switch`, then decays linearly back to
    /// `p_before` over `decay_steps` (0 holds `p_after`).
    Abrupt {
        p_before: f64,
        p_after: f64,
        t_switch: u64,
        #[serde(default = "default_decay")]
        decay_steps: u64,
    },
    /// `p_start + slope·t`, stopping at `p_end`.
    LinearDrift {
        p_start: f64,
        slope: f64,
        p_end: f64,
    },
    /// Piecewise-constant blocks whose imbalance ratio is
    /// `multiplier · (1 − base_p1) / base_p1`.
    ResampleGrid {
        base_p1: f64,
        multipliers: Vec<f64>,
        block_len: u64,
    },
}

fn qp_to_p1(qp: f64) -> f64 {
    1.0 / (1.0 + qp)
}

impl PriorTrajectory {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| p > 0.0 && p < 1.0;
        let ok = match self {
            Self::Constant { p } => prob(*p),
            Self::Abrupt { p_before, p_after, .. } => prob(*p_before) && prob(*p_after),
            Self::LinearDrift { p_start, slope, p_end } => {
                prob(*p_start) && prob(*p_end) && slope.is_finite() && slope.abs() < 1.0
            }
            Self::ResampleGrid { base_p1, multipliers, block_len } => {
                prob(*base_p1)
                    && !multipliers.is_empty()
                    && multipliers.iter().all(|m| m.is_finite() && *m > 0.0)
                    && *block_len > 0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(ObilError::InvalidConfig(format!("invalid prior trajectory {self:?}")))
        }
    }

    /// `P_1` at step `t`, clipped to `[η, 1 − η]`.
    pub fn prior_at(&self, t: u64) -> f64 {
        let p = match self {
            Self::Constant { p } => *p,
            Self::Abrupt { p_before, p_after, t_switch, decay_steps } => {
                if t < *t_switch {
                    *p_before
                } else if *decay_steps == 0 {
                    *p_after
                } else {
                    let frac = ((t - t_switch) as f64 / *decay_steps as f64).min(1.0);
                    p_after + (p_before - p_after) * frac
                }
            }
            Self::LinearDrift { p_start, slope, p_end } => {
                let p = p_start + slope * t as f64;
                if *slope >= 0.0 {
                    p.min(*p_end)
                } else {
                    p.max(*p_end)
                }
            }
            Self::ResampleGrid { base_p1, multipliers, block_len } => {
                let i = ((t / block_len) as usize).min(multipliers.len() - 1);
                qp_to_p1(multipliers[i] * (1.0 - base_p1) / base_p1)
            }
        };
        p.clamp(PRIOR_FLOOR, 1.0 - PRIOR_FLOOR)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamScenario {
    #[serde(default)]
    pub problem: GaussianProblem,
    pub trajectory: PriorTrajectory,
    pub horizon: u64,
    #[serde(default)]
    pub seed: u64,
}

/// One stream draw.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSample {
    pub x: Vec<f64>,
    pub y: u8,
    pub p1: f64,
}

impl StreamScenario {
    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        self.trajectory.validate()?;
        if self.horizon == 0 {
            return Err(ObilError::InvalidConfig("horizon must be at least 1".into()));
        }
        Ok(())
    }

    /// Draws `y ~ Bernoulli(P_1(t))` and `x ~ p(x | y)`.
    pub fn sample_step<R: Rng + ?Sized>(&self, t: u64, rng: &mut R) -> Result<StreamSample> {
        if t > self.horizon {
            return Err(ObilError::InvalidConfig(format!("step {t} beyond horizon {}", self.horizon)));
        }
        let p1 = self.trajectory.prior_at(t);
        let y = u8::from(rng.random::<f64>() < p1);
        Ok(StreamSample { x: self.problem.sample_x(y, rng), y, p1 })
    }

    /// The full stream for steps `0..horizon`, from the scenario seed.
    pub fn generate(&self) -> Result<Vec<StreamSample>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.horizon).map(|t| self.sample_step(t, &mut rng)).collect()
    }
}

/// Predicts 1 iff `q_L > Q_C (1 − p1) / p1`.
pub fn oracle_decision(log_lr: f64, qc: f64, p1: f64) -> u8 {
    u8::from(log_lr.exp() > qc * (1.0 - p1) / p1)
}

/// Per-step losses of the adaptive policy and the oracle.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegretLedger {
    pub alg_loss: Vec<f64>,
    pub oracle_loss: Vec<f64>,
    pub alg_expected: Vec<f64>,
    pub oracle_expected: Vec<f64>,
    /// Running sum of `alg_expected − oracle_expected`.
    pub cum_regret: Vec<f64>,
}

impl RegretLedger {
    pub fn len(&self) -> usize {
        self.cum_regret.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cum_regret.is_empty()
    }

    pub fn push(&mut self, alg: f64, oracle: f64, alg_exp: f64, oracle_exp: f64) {
        let prev = self.cum_regret.last().copied().unwrap_or(0.0);
        self.alg_loss.push(alg);
        self.oracle_loss.push(oracle);
        self.alg_expected.push(alg_exp);
        self.oracle_expected.push(oracle_exp);
        self.cum_regret.push(prev + (alg_exp - oracle_exp));
    }

    pub fn final_regret(&self) -> f64 {
        self.cum_regret.last().copied().unwrap_or(0.0)
    }

    /// Delimited rows with 1-based step index.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,alg_loss,oracle_loss,cum_regret,alg_expected,oracle_expected\n");
        for i in 0..self.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                i + 1,
                self.alg_loss[i],
                self.oracle_loss[i],
                self.cum_regret[i],
                self.alg_expected[i],
                self.oracle_expected[i]
            );
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct RegretRun {
    pub ledger: RegretLedger,
    pub trace: Vec<StepRecord>,
}

/// Streams the scenario through the adapter (fed by `source`) and the
/// oracle, accruing realized and expected cost-sensitive losses.
///
/// The oracle uses the same log-ratio as the adapter, so regret isolates
/// prior tracking. Expected losses use the exact posterior of the
/// scenario's Gaussian problem at the true prior.
pub fn run_regret_experiment<R: Rng>(
    scenario: &StreamScenario,
    adapter_cfg: &AdapterConfig,
    source: &dyn LogLrSource,
    rng: &mut R,
) -> Result<RegretRun> {
    scenario.validate()?;
    let mut adapter = OnlineAdapter::new(adapter_cfg.clone())?;
    let qc = adapter_cfg.qc;
    let mut ledger = RegretLedger::default();
    let mut trace = Vec::with_capacity(scenario.horizon as usize);
    for t in 0..scenario.horizon {
        let s = scenario.sample_step(t, rng)?;
        let l = source.log_lr(&s.x, rng)?;
        let rec = adapter.step(l)?;
        let oracle = oracle_decision(l, qc, s.p1);
        let post = posterior_from_log_lr(scenario.problem.log_lr(&s.x), s.p1);
        ledger.push(
            cost_sensitive_loss(rec.prediction, s.y, qc),
            cost_sensitive_loss(oracle, s.y, qc),
            expected_cost_sensitive_loss(rec.prediction, post, qc),
            expected_cost_sensitive_loss(oracle, post, qc),
        );
        trace.push(rec);
    }
    Ok(RegretRun { ledger, trace })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResampledTestset {
    pub dataset: LabeledDataset,
    /// At least one class had to be drawn with replacement.
    pub with_replacement: bool,
}

/// Resamples `dataset` so that its imbalance ratio becomes
/// `multiplier · Q_P`. Without `total`, the larger feasible subset is kept
/// (one class untouched, the other subsampled). With `total`, classes are
/// drawn to that size, with replacement only when a class runs out.
pub fn make_resampled_testset(
    dataset: &LabeledDataset,
    multiplier: f64,
    total: Option<usize>,
    seed: u64,
) -> Result<ResampledTestset> {
    if !(multiplier.is_finite() && multiplier > 0.0) {
        return Err(ObilError::InfeasibleTarget(format!("multiplier {multiplier}")));
    }
    let (n0, n1) = dataset.class_counts();
    if n0 == 0 || n1 == 0 {
        return Err(ObilError::DegenerateData("both classes must be present".into()));
    }
    let target = multiplier * n0 as f64 / n1 as f64;
    let (want0, want1) = match total {
        None if target >= n0 as f64 / n1 as f64 => (n0 as f64, n0 as f64 / target),
        None => (target * n1 as f64, n1 as f64),
        Some(n) => {
            let w1 = n as f64 / (1.0 + target);
            (n as f64 - w1, w1)
        }
    };
    if want0 < 1.0 || want1 < 1.0 {
        return Err(ObilError::InfeasibleTarget(format!("class sizes {want0:.2}/{want1:.2} below one")));
    }
    let (want0, want1) = ((want0 + 0.5).floor() as usize, (want1 + 0.5).floor() as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut with_replacement = false;
    let mut keep = Vec::with_capacity(want0 + want1);
    let mut extra = Vec::new();
    for (class, want) in [(0u8, want0), (1u8, want1)] {
        let members = dataset.class_indices(class);
        if want <= members.len() {
            keep.extend(index::sample(&mut rng, members.len(), want).into_iter().map(|i| members[i]));
        } else {
            with_replacement = true;
            keep.extend_from_slice(&members);
            extra.extend((0..want - members.len()).map(|_| members[rng.random_range(0..members.len())]));
        }
    }
    keep.sort_unstable();
    keep.extend(extra);
    Ok(ResampledTestset { dataset: dataset.subset(&keep), with_replacement })
}

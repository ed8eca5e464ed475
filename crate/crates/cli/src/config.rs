//! Experiment configuration (JSON). Every section is optional and falls
//! back to library defaults except `data` and `seeds`.

use std::path::{Path, PathBuf};

use obil_core::adapter::AdapterConfig;
use obil_core::ensemble::EnsembleConfig;
use obil_core::losses::LossKind;
use obil_core::metrics::DEFAULT_BINS;
use obil_core::mlp::{Activation, NetworkConfig, TrainingConfig};
use obil_core::shift_sim::{GaussianProblem, PriorTrajectory};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    #[serde(default)]
    pub split: SplitFractions,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    /// Rescale the fused log-ratio by a temperature fitted on the
    /// calibration split before streaming the test set.
    #[serde(default)]
    pub temperature_fit: bool,
    #[serde(default)]
    pub adapter: AdapterConfig,
    #[serde(default)]
    pub scenario: Option<ScenarioSection>,
    /// Multiplier applied to the test split's imbalance ratio.
    #[serde(default = "unit")]
    pub test_shift: f64,
    #[serde(default = "all_baselines")]
    pub baselines: Vec<BaselineKind>,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub evaluate: Option<EvaluateSection>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn unit() -> f64 {
    1.0
}

fn all_baselines() -> Vec<BaselineKind> {
    vec![BaselineKind::None, BaselineKind::ThresholdMoving, BaselineKind::LogitAdjustment, BaselineKind::Bbse]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Gaussian {
        #[serde(default)]
        problem: GaussianProblem,
        n0: usize,
        n1: usize,
    },
    Csv(CsvSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    #[serde(default = "default_label_column")]
    pub label_column: String,
    #[serde(default = "default_positive")]
    pub positive_value: String,
}

fn default_label_column() -> String {
    "label".into()
}
fn default_positive() -> String {
    "1".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub calibration: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.7, calibration: 0.15, test: 0.15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub dropout_rate: f64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let n = NetworkConfig::new(1);
        Self { hidden_dims: n.hidden_dims, activation: n.activation, dropout_rate: n.dropout_rate }
    }
}

impl NetworkSection {
    pub fn resolve(&self, input_dim: usize, seed: u64) -> NetworkConfig {
        NetworkConfig {
            input_dim,
            hidden_dims: self.hidden_dims.clone(),
            activation: self.activation,
            dropout_rate: self.dropout_rate,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub name: String,
    /// Only read by `squared_costweighted`.
    #[serde(default = "unit")]
    pub qc_tilde: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        Self { name: "squared".into(), qc_tilde: 1.0 }
    }
}

impl LossSection {
    pub fn resolve(&self) -> Result<LossKind> {
        LossKind::from_id(&self.name, self.qc_tilde).map_err(|e| CliError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    #[serde(default)]
    pub problem: GaussianProblem,
    pub trajectory: PriorTrajectory,
    pub horizon: u64,
    #[serde(default)]
    pub lr_source: LrSource,
}

/// Where the stream's log-ratios come from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSource {
    /// Exact Gaussian log-ratio.
    #[default]
    Analytic,
    /// The ensemble trained earlier in the same `run`.
    Trained,
    /// A serialized ensemble.
    Model { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    None,
    ThresholdMoving,
    LogitAdjustment,
    Bbse,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::ThresholdMoving => "threshold_moving",
            Self::LogitAdjustment => "logit_adjustment",
            Self::Bbse => "bbse",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    pub bins: usize,
    pub ece_gate: f64,
    pub bbse_batch: usize,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self { bins: DEFAULT_BINS, ece_gate: 0.05, bbse_batch: obil_core::baselines::DEFAULT_BBSE_BATCH }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    pub model: PathBuf,
    pub data: CsvSource,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Decision {
    /// Bayes threshold at a fixed minority prior.
    Fixed { p1: f64 },
    /// Threshold tracked by the online adapter.
    Adaptive,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks everything that can be checked without touching data.
    pub fn validate(&self) -> Result<()> {
        let core = |r: obil_core::Result<()>| r.map_err(|e| invalid(e.to_string()));
        if self.seeds.is_empty() {
            return Err(invalid("seed list is empty"));
        }
        match &self.data {
            DataSource::Gaussian { problem, n0, n1 } => {
                core(problem.validate())?;
                if *n0 < 2 || *n1 < 2 {
                    return Err(invalid("gaussian data needs at least two samples per class"));
                }
            }
            DataSource::Csv(src) => {
                if src.label_column.is_empty() {
                    return Err(invalid("label_column is empty"));
                }
            }
        }
        let s = self.split;
        if [s.train, s.calibration, s.test].iter().any(|f| !(*f > 0.0)) || (s.train + s.calibration + s.test - 1.0).abs() > 1e-9
        {
            return Err(invalid(format!("split fractions {s:?} must be positive and sum to 1")));
        }
        core(self.network.resolve(1, 0).validate())?;
        core(self.training.validate())?;
        self.loss.resolve()?;
        core(self.ensemble.validate())?;
        core(self.adapter.validate())?;
        if let Some(sc) = &self.scenario {
            core(sc.problem.validate())?;
            core(sc.trajectory.validate())?;
            if sc.horizon == 0 {
                return Err(invalid("scenario horizon must be at least 1"));
            }
        }
        if !(self.test_shift.is_finite() && self.test_shift > 0.0) {
            return Err(invalid(format!("test_shift {} must be positive", self.test_shift)));
        }
        let m = self.metrics;
        if m.bins == 0 || m.bbse_batch == 0 || !(m.ece_gate > 0.0 && m.ece_gate <= 1.0) {
            return Err(invalid("metrics: bins and bbse_batch must be positive, ece_gate in (0, 1]"));
        }
        if let Some(Decision::Fixed { p1 }) = self.evaluate.as_ref().map(|e| &e.decision) {
            if !(*p1 > 0.0 && *p1 < 1.0) {
                return Err(invalid(format!("fixed decision prior {p1} not in (0, 1)")));
            }
        }
        Ok(())
    }

    /// Fully resolved config, defaults included. The output directory is
    /// left out: it never affects results.
    pub fn echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().expect("object").remove("output_dir");
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"data": {"source": "gaussian", "n0": 50, "n1": 50}, "seeds": [1]}"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.split, SplitFractions::default());
        assert_eq!(cfg.loss.name, "squared");
        assert_eq!(cfg.baselines.len(), 4);
        assert_eq!(cfg.metrics.bins, 15);
    }

    #[test]
    fn echo_round_trips() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        let back: ExperimentConfig = serde_json::from_value(cfg.echo()).unwrap();
        assert_eq!(back, cfg);
        let mut with_dir = cfg.clone();
        with_dir.output_dir = Some("elsewhere".into());
        assert_eq!(with_dir.echo(), cfg.echo());
    }

    #[test]
    fn rejects_bad_identifiers() {
        let bad_loss = r#"{"data": {"source": "gaussian", "n0": 50, "n1": 50}, "seeds": [1], "loss": {"name": "hinge"}}"#;
        assert!(matches!(ExperimentConfig::from_json(bad_loss), Err(CliError::Config(m)) if m.contains("hinge")));
        let bad_baseline = r#"{"data": {"source": "gaussian", "n0": 50, "n1": 50}, "seeds": [1], "baselines": ["svm"]}"#;
        assert!(matches!(ExperimentConfig::from_json(bad_baseline), Err(CliError::Config(_))));
        let bad_kind = r#"{"data": {"source": "gaussian", "n0": 50, "n1": 50}, "seeds": [1],
            "scenario": {"trajectory": {"kind": "sine"}, "horizon": 5}}"#;
        assert!(matches!(ExperimentConfig::from_json(bad_kind), Err(CliError::Config(_))));
        let unknown_field = r#"{"data": {"source": "gaussian", "n0": 50, "n1": 50}, "seeds": [1], "sedes": [2]}"#;
        assert!(ExperimentConfig::from_json(unknown_field).is_err());
    }

    #[test]
    fn rejects_empty_seeds_and_bad_split() {
        let no_seeds = r#"{"data": {"source": "gaussian", "n0": 50, "n1": 50}, "seeds": []}"#;
        assert!(matches!(ExperimentConfig::from_json(no_seeds), Err(CliError::Config(_))));
        let split = r#"{"data": {"source": "gaussian", "n0": 50, "n1": 50}, "seeds": [1],
            "split": {"train": 0.8, "calibration": 0.15, "test": 0.15}}"#;
        assert!(matches!(ExperimentConfig::from_json(split), Err(CliError::Config(_))));
    }
}

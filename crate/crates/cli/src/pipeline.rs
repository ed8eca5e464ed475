//! Subcommand implementations. Each seed draws every random quantity from
//! its own ChaCha streams, so results depend only on config and seed.

use std::fs;
use std::path::{Path, PathBuf};

use obil_core::adapter::{OnlineAdapter, StepRecord};
use obil_core::baselines::{confusion_matrix, threshold_moving_fit, BbseTracker, ShiftCorrection};
use obil_core::bayes::{posterior_from_log_lr, sigmoid};
use obil_core::codec::{decode_ensemble, encode_ensemble};
use obil_core::dataset::LabeledDataset;
use obil_core::ensemble::{train_ensemble, LikelihoodRatioEnsemble, LogLrSource};
use obil_core::metrics::{
    binary_confidence, binary_ece, fit_temperature, reliability_bins, reliability_csv, scaled_posterior, ConfusionCounts,
};
use obil_core::shift_sim::{make_resampled_testset, run_regret_experiment, GaussianProblem, RegretRun, StreamScenario};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{BaselineKind, DataSource, Decision, ExperimentConfig, LrSource, ScenarioSection};
use crate::error::{at_stage, CliError, Result};
use crate::ingest::{ingest_csv, write_csv, write_csv_file};
use crate::report::{aggregate, aggregate_csv, per_seed_csv, ExperimentReport, Failure, MetricRow, SeedSummary, TOOL_NAME, TOOL_VERSION};

const DATA_STREAM: u64 = 1;
const SPLIT_STREAM: u64 = 2;
const SCORE_STREAM: u64 = 3;
const ORDER_STREAM: u64 = 4;
const SCENARIO_STREAM: u64 = 5;

fn stage_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(CliError::io(path))
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(CliError::io(path))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn trace_lines(trace: &[StepRecord]) -> String {
    trace.iter().map(|r| r.to_json_line() + "\n").collect()
}

pub fn load_data(cfg: &ExperimentConfig, seed: u64) -> Result<LabeledDataset> {
    match &cfg.data {
        DataSource::Gaussian { problem, n0, n1 } => Ok(problem.sample_counts(*n0, *n1, &mut stage_rng(seed, DATA_STREAM))?),
        DataSource::Csv(src) => Ok(ingest_csv(&src.path, &src.label_column, &src.positive_value)?.0),
    }
}

pub struct Splits {
    pub train: LabeledDataset,
    pub calibration: LabeledDataset,
    pub test: LabeledDataset,
}

pub fn split(cfg: &ExperimentConfig, data: &LabeledDataset, seed: u64) -> Result<Splits> {
    let s = cfg.split;
    let mut parts = data.stratified_split(&[s.train, s.calibration, s.test], &mut stage_rng(seed, SPLIT_STREAM))?;
    let test = parts.pop().expect("three parts");
    let calibration = parts.pop().expect("three parts");
    let train = parts.pop().expect("three parts");
    for (name, part) in [("train", &train), ("calibration", &calibration), ("test", &test)] {
        if !part.has_both_classes() {
            return Err(CliError::Stage { stage: "split".into(), message: format!("{name} split lacks a class") });
        }
    }
    Ok(Splits { train, calibration, test })
}

pub fn train_model(cfg: &ExperimentConfig, train: &LabeledDataset, seed: u64) -> Result<LikelihoodRatioEnsemble> {
    let net = cfg.network.resolve(train.dim(), seed);
    let loss = cfg.loss.resolve()?;
    Ok(train_ensemble(train, &cfg.ensemble, &net, &cfg.training, &loss, seed)?.ensemble)
}

fn minority_prior(d: &LabeledDataset) -> f64 {
    let (n0, n1) = d.class_counts();
    n1 as f64 / (n0 + n1) as f64
}

fn fused_scores(source: &dyn LogLrSource, data: &LabeledDataset, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    Ok(data.iter().map(|(x, _)| source.log_lr(x, rng)).collect::<obil_core::Result<_>>()?)
}

/// Temperature on the posterior logit `l + b`, with `b` the training
/// log-odds, mapped back to a log-ratio.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LogitTemperature {
    pub temperature: f64,
    pub offset: f64,
    pub at_boundary: bool,
}

impl LogitTemperature {
    pub fn fit(scores: &[f64], labels: &[u8], train_p1: f64) -> Result<Self> {
        let offset = (train_p1 / (1.0 - train_p1)).ln();
        let logits: Vec<f64> = scores.iter().map(|l| l + offset).collect();
        let fit = fit_temperature(&logits, labels)?;
        Ok(Self { temperature: fit.temperature, offset, at_boundary: fit.at_boundary })
    }

    pub fn apply(&self, log_lr: f64) -> f64 {
        (log_lr + self.offset) / self.temperature - self.offset
    }
}

/// Decisions and posteriors of one fixed-prior rule over a score stream.
fn fixed_rule(rule: &ShiftCorrection, p1: f64, scores: &[f64], labels: &[u8]) -> (ConfusionCounts, Vec<f64>) {
    let mut c = ConfusionCounts::default();
    for (&l, &y) in scores.iter().zip(labels) {
        c.record(rule.decide(l), y);
    }
    (c, scores.iter().map(|&l| posterior_from_log_lr(l, p1)).collect())
}

pub struct StreamOutcome {
    pub rows: Vec<MetricRow>,
    pub trace: Vec<StepRecord>,
    pub obil_posteriors: Vec<f64>,
    /// Baselines that could not run, as `(stage, message)`; the other
    /// rows are still reported.
    pub baseline_failures: Vec<(String, String)>,
}

/// Streams test scores through the adapter and the configured baselines.
/// `cal_*` are the calibration-split scores the baselines fit on.
pub fn evaluate_stream(
    cfg: &ExperimentConfig,
    seed: u64,
    scores: &[f64],
    labels: &[u8],
    cal_scores: &[f64],
    cal_labels: &[u8],
    train_p1: f64,
) -> Result<StreamOutcome> {
    let qc = cfg.adapter.qc;
    let bins = cfg.metrics.bins;
    let mut adapter = OnlineAdapter::new(cfg.adapter.clone())?;
    let mut counts = ConfusionCounts::default();
    let mut post = Vec::with_capacity(scores.len());
    let mut trace = Vec::with_capacity(scores.len());
    for (&l, &y) in scores.iter().zip(labels) {
        post.push(posterior_from_log_lr(l, adapter.p1_hat()));
        let r = adapter.step(l)?;
        counts.record(r.prediction, y);
        trace.push(r);
    }
    let mut rows = vec![MetricRow::compute(seed, "obil", &counts, scores, &post, labels, bins)?];

    let mut baseline_failures = Vec::new();
    for &b in &cfg.baselines {
        let outcome = (|| -> obil_core::Result<(ConfusionCounts, Vec<f64>)> {
            Ok(match b {
                BaselineKind::None => fixed_rule(&ShiftCorrection::None { qc, train_p1 }, train_p1, scores, labels),
                BaselineKind::ThresholdMoving => {
                    let fit = threshold_moving_fit(cal_scores, cal_labels)?;
                    fixed_rule(&ShiftCorrection::ThresholdMoving { threshold: fit.threshold }, train_p1, scores, labels)
                }
                BaselineKind::LogitAdjustment => {
                    let test_p1 = labels.iter().map(|&y| f64::from(y)).sum::<f64>() / labels.len() as f64;
                    fixed_rule(&ShiftCorrection::LogitAdjustment { train_p1, test_p1 }, test_p1, scores, labels)
                }
                BaselineKind::Bbse => {
                    let source = ShiftCorrection::None { qc, train_p1 };
                    let preds: Vec<u8> = cal_scores.iter().map(|&l| source.decide(l)).collect();
                    let conf = confusion_matrix(&preds, cal_labels)?;
                    let mut tracker = BbseTracker::new(conf, qc, train_p1, cfg.metrics.bbse_batch)?;
                    let mut c = ConfusionCounts::default();
                    let mut p = Vec::with_capacity(scores.len());
                    for (&l, &y) in scores.iter().zip(labels) {
                        p.push(posterior_from_log_lr(l, tracker.estimate_p1()));
                        c.record(tracker.step(l)?, y);
                    }
                    (c, p)
                }
            })
        })();
        match outcome {
            Ok((c, p)) => rows.push(MetricRow::compute(seed, b.name(), &c, scores, &p, labels, bins)?),
            Err(e) => baseline_failures.push((format!("baseline {}", b.name()), e.to_string())),
        }
    }
    Ok(StreamOutcome { rows, trace, obil_posteriors: post, baseline_failures })
}

enum Source {
    Analytic(GaussianProblem),
    Model(LikelihoodRatioEnsemble),
}

fn load_model(path: &Path) -> Result<LikelihoodRatioEnsemble> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    Ok(decode_ensemble(&bytes)?)
}

fn scenario_source(sc: &ScenarioSection, trained: Option<&LikelihoodRatioEnsemble>) -> Result<Source> {
    let src = match &sc.lr_source {
        LrSource::Analytic => Source::Analytic(sc.problem.clone()),
        LrSource::Model { path } => Source::Model(load_model(path)?),
        LrSource::Trained => Source::Model(
            trained.cloned().ok_or_else(|| CliError::Config("lr_source 'trained' is only available in `run`".into()))?,
        ),
    };
    if let Source::Model(m) = &src {
        if m.input_dim() != sc.problem.dim() {
            return Err(CliError::Stage {
                stage: "scenario".into(),
                message: format!("model expects {} features, scenario has {}", m.input_dim(), sc.problem.dim()),
            });
        }
    }
    Ok(src)
}

fn run_scenario(cfg: &ExperimentConfig, seed: u64, trained: Option<&LikelihoodRatioEnsemble>) -> Result<RegretRun> {
    let sc = cfg.scenario.as_ref().ok_or_else(|| CliError::Config("config has no scenario section".into()))?;
    let source = scenario_source(sc, trained)?;
    let scenario =
        StreamScenario { problem: sc.problem.clone(), trajectory: sc.trajectory.clone(), horizon: sc.horizon, seed };
    let source: &dyn LogLrSource = match &source {
        Source::Analytic(g) => g,
        Source::Model(m) => m,
    };
    run_regret_experiment(&scenario, &cfg.adapter, source, &mut stage_rng(seed, SCENARIO_STREAM)).map_err(at_stage("scenario"))
}

/// Adapter trace over the configured scenario, one record per step.
pub fn simulate(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<StepRecord>> {
    Ok(run_scenario(cfg, seed, None)?.trace)
}

pub fn regret(cfg: &ExperimentConfig, seed: u64) -> Result<RegretRun> {
    run_scenario(cfg, seed, None)
}

pub fn generate(cfg: &ExperimentConfig, seed: u64) -> Result<LabeledDataset> {
    match cfg.data {
        DataSource::Gaussian { .. } => load_data(cfg, seed),
        DataSource::Csv(_) => Err(CliError::Config("`gen` needs a gaussian data source".into())),
    }
}

pub fn gen_csv(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_csv(&generate(cfg, seed)?, &mut buf)?;
    Ok(buf)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub seed: u64,
    pub dim: usize,
    pub train_counts: (usize, usize),
    pub native_qp: f64,
    pub loss: String,
    pub member_training_qps: Vec<f64>,
}

/// Trains on the train split and writes the model and all three splits.
pub fn train(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<TrainSummary> {
    let data = load_data(cfg, seed).map_err(at_stage("data"))?;
    let s = split(cfg, &data, seed)?;
    let ens = train_model(cfg, &s.train, seed).map_err(at_stage("train"))?;
    ensure_dir(out)?;
    write(&out.join("ensemble.obil"), encode_ensemble(&ens))?;
    write_csv_file(&s.train, &out.join("train.csv"))?;
    write_csv_file(&s.calibration, &out.join("calibration.csv"))?;
    write_csv_file(&s.test, &out.join("test.csv"))?;
    let summary = TrainSummary {
        seed,
        dim: s.train.dim(),
        train_counts: s.train.class_counts(),
        native_qp: s.train.imbalance_ratio(),
        loss: cfg.loss.name.clone(),
        member_training_qps: ens.members.iter().map(|m| m.training_qp).collect(),
    };
    write(&out.join("train_summary.json"), to_json(&summary))?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    pub seed: u64,
    pub temperature: f64,
    pub at_boundary: bool,
    pub ece_before: f64,
    pub ece_after: f64,
    pub gate: f64,
    pub gate_passed: bool,
    pub n_calibration: usize,
    pub n_test: usize,
}

/// Fits a temperature on the calibration split and reports test ECE
/// before and after, with the gate verdict.
pub fn calibrate(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<CalibrationReport> {
    let data = load_data(cfg, seed).map_err(at_stage("data"))?;
    let s = split(cfg, &data, seed)?;
    let ens = train_model(cfg, &s.train, seed).map_err(at_stage("train"))?;
    let train_p1 = minority_prior(&s.train);
    let mut rng = stage_rng(seed, SCORE_STREAM);
    let cal = fused_scores(&ens, &s.calibration, &mut rng).map_err(at_stage("score"))?;
    let test = fused_scores(&ens, &s.test, &mut rng).map_err(at_stage("score"))?;
    let t = LogitTemperature::fit(&cal, s.calibration.labels(), train_p1).map_err(at_stage("temperature"))?;

    let before: Vec<f64> = test.iter().map(|l| sigmoid(l + t.offset)).collect();
    let after: Vec<f64> = test.iter().map(|l| scaled_posterior(l + t.offset, t.temperature)).collect();
    let bins = cfg.metrics.bins;
    let table = |p: &[f64]| -> Result<_> {
        let (conf, correct) = binary_confidence(p, s.test.labels());
        Ok(reliability_bins(&conf, &correct, bins)?)
    };
    let ece_before = binary_ece(&before, s.test.labels(), bins)?.value;
    let ece_after = binary_ece(&after, s.test.labels(), bins)?.value;
    let report = CalibrationReport {
        seed,
        temperature: t.temperature,
        at_boundary: t.at_boundary,
        ece_before,
        ece_after,
        gate: cfg.metrics.ece_gate,
        gate_passed: ece_after < cfg.metrics.ece_gate,
        n_calibration: s.calibration.len(),
        n_test: s.test.len(),
    };
    ensure_dir(out)?;
    write(&out.join("reliability_before.csv"), reliability_csv(&table(&before)?))?;
    write(&out.join("reliability_after.csv"), reliability_csv(&table(&after)?))?;
    write(&out.join("calibrate.json"), to_json(&report))?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluationReport {
    pub model: PathBuf,
    pub data: PathBuf,
    pub decision: Decision,
    pub n: usize,
    pub metrics: MetricRow,
    pub final_p1_hat: Option<f64>,
}

/// Metrics of a serialized ensemble on a CSV file, streamed in file order.
pub fn evaluate(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<EvaluationReport> {
    let ev = cfg.evaluate.as_ref().ok_or_else(|| CliError::Config("config has no evaluate section".into()))?;
    let model = load_model(&ev.model)?;
    let (data, _) = ingest_csv(&ev.data.path, &ev.data.label_column, &ev.data.positive_value)?;
    let scores = fused_scores(&model, &data, &mut stage_rng(seed, SCORE_STREAM)).map_err(at_stage("score"))?;
    let labels = data.labels();
    let bins = cfg.metrics.bins;
    ensure_dir(out)?;
    let (row, final_p1_hat) = match ev.decision {
        Decision::Fixed { p1 } => {
            let (c, p) = fixed_rule(&ShiftCorrection::None { qc: cfg.adapter.qc, train_p1: p1 }, p1, &scores, labels);
            (MetricRow::compute(seed, "fixed", &c, &scores, &p, labels, bins)?, None)
        }
        Decision::Adaptive => {
            let mut adapter = OnlineAdapter::new(cfg.adapter.clone())?;
            let mut c = ConfusionCounts::default();
            let mut p = Vec::with_capacity(scores.len());
            let mut trace = Vec::with_capacity(scores.len());
            for (&l, &y) in scores.iter().zip(labels) {
                p.push(posterior_from_log_lr(l, adapter.p1_hat()));
                let r = adapter.step(l)?;
                c.record(r.prediction, y);
                trace.push(r);
            }
            write(&out.join("trace.jsonl"), trace_lines(&trace))?;
            (MetricRow::compute(seed, "obil", &c, &scores, &p, labels, bins)?, Some(adapter.p1_hat()))
        }
    };
    let report = EvaluationReport {
        model: ev.model.clone(),
        data: ev.data.path.clone(),
        decision: ev.decision.clone(),
        n: data.len(),
        metrics: row,
        final_p1_hat,
    };
    write(&out.join("evaluate.json"), to_json(&report))?;
    Ok(report)
}

fn run_seed(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<SeedOutcome> {
    ensure_dir(dir)?;
    let data = load_data(cfg, seed).map_err(at_stage("data"))?;
    let s = split(cfg, &data, seed)?;
    let train_p1 = minority_prior(&s.train);
    let ens = train_model(cfg, &s.train, seed).map_err(at_stage("train"))?;
    write(&dir.join("ensemble.obil"), encode_ensemble(&ens))?;

    let test = if cfg.test_shift == 1.0 {
        s.test.clone()
    } else {
        make_resampled_testset(&s.test, cfg.test_shift, None, seed).map_err(at_stage("test_shift"))?.dataset
    };
    let mut order: Vec<usize> = (0..test.len()).collect();
    order.shuffle(&mut stage_rng(seed, ORDER_STREAM));
    let test = test.subset(&order);

    let mut rng = stage_rng(seed, SCORE_STREAM);
    let mut cal = fused_scores(&ens, &s.calibration, &mut rng).map_err(at_stage("score"))?;
    let mut scores = fused_scores(&ens, &test, &mut rng).map_err(at_stage("score"))?;
    let mut temperature = None;
    if cfg.temperature_fit {
        let t = LogitTemperature::fit(&cal, s.calibration.labels(), train_p1).map_err(at_stage("temperature"))?;
        cal.iter_mut().chain(scores.iter_mut()).for_each(|l| *l = t.apply(*l));
        temperature = Some(t.temperature);
    }

    let outcome = evaluate_stream(cfg, seed, &scores, test.labels(), &cal, s.calibration.labels(), train_p1)
        .map_err(at_stage("stream"))?;
    write(&dir.join("metrics.csv"), per_seed_csv(&outcome.rows))?;
    write(&dir.join("test_trace.jsonl"), trace_lines(&outcome.trace))?;
    let (conf, correct) = binary_confidence(&outcome.obil_posteriors, test.labels());
    write(&dir.join("reliability.csv"), reliability_csv(&reliability_bins(&conf, &correct, cfg.metrics.bins)?))?;

    let mut final_regret = None;
    if cfg.scenario.is_some() {
        let run = run_scenario(cfg, seed, Some(&ens))?;
        write(&dir.join("scenario_trace.jsonl"), trace_lines(&run.trace))?;
        write(&dir.join("regret.csv"), run.ledger.to_csv())?;
        final_regret = Some(run.ledger.final_regret());
    }
    let summary = SeedSummary {
        seed,
        train_counts: s.train.class_counts(),
        calibration_counts: s.calibration.class_counts(),
        test_counts: test.class_counts(),
        temperature,
        final_p1_hat: outcome.trace.last().map_or(cfg.adapter.initial_p1, |r| r.p1_hat_after),
        final_regret,
    };
    write(&dir.join("summary.json"), to_json(&summary))?;
    let failures = outcome
        .baseline_failures
        .into_iter()
        .map(|(stage, message)| Failure { seed, stage, message })
        .collect();
    Ok(SeedOutcome { rows: outcome.rows, summary, failures })
}

struct SeedOutcome {
    rows: Vec<MetricRow>,
    summary: SeedSummary,
    failures: Vec<Failure>,
}

/// Runs every configured seed into `out/seed_<n>/` and writes the
/// aggregate report. A failing seed is recorded with its stage and the
/// remaining seeds still run.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentReport> {
    ensure_dir(out)?;
    let mut rows = Vec::new();
    let mut seeds = Vec::new();
    let mut failures = Vec::new();
    for &seed in &cfg.seeds {
        match run_seed(cfg, seed, &out.join(format!("seed_{seed}"))) {
            Ok(o) => {
                rows.extend(o.rows);
                seeds.push(o.summary);
                failures.extend(o.failures);
            }
            Err(e) => {
                let (stage, message) = match e {
                    CliError::Stage { stage, message } => (stage, message),
                    other => ("run".to_string(), other.to_string()),
                };
                failures.push(Failure { seed, stage, message });
            }
        }
    }
    let report = ExperimentReport {
        tool: TOOL_NAME.into(),
        version: TOOL_VERSION.into(),
        config: cfg.echo(),
        aggregate: aggregate(&rows),
        per_seed: rows,
        seeds,
        failures,
    };
    write(&out.join("per_seed.csv"), per_seed_csv(&report.per_seed))?;
    write(&out.join("aggregate.csv"), aggregate_csv(&report.aggregate))?;
    write(&out.join("report.json"), to_json(&report))?;
    Ok(report)
}

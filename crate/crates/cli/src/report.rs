//! Per-seed metric rows and their aggregates.

use std::collections::BTreeMap;

use obil_core::metrics::{auprc, binary_ece, f1, g_mean, ConfusionCounts, Metric};
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const TOOL_NAME: &str = "obil";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const METRIC_NAMES: [&str; 4] = ["f1", "g_mean", "auprc", "ece"];

/// One method on one seed. `None` marks a metric that is undefined on
/// that run (no positives predicted, one class missing, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub seed: u64,
    pub method: String,
    pub f1: Option<f64>,
    pub g_mean: Option<f64>,
    pub auprc: Option<f64>,
    pub ece: Option<f64>,
}

impl MetricRow {
    /// `scores` feed AUPRC, `posteriors` feed ECE.
    pub fn compute(
        seed: u64,
        method: &str,
        counts: &ConfusionCounts,
        scores: &[f64],
        posteriors: &[f64],
        labels: &[u8],
        bins: usize,
    ) -> Result<Self> {
        let opt = |m: Metric| m.defined.then_some(m.value);
        Ok(Self {
            seed,
            method: method.to_string(),
            f1: opt(f1(counts)),
            g_mean: opt(g_mean(counts)),
            auprc: opt(auprc(scores, labels)?),
            ece: opt(binary_ece(posteriors, labels, bins)?),
        })
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        match metric {
            "f1" => self.f1,
            "g_mean" => self.g_mean,
            "auprc" => self.auprc,
            "ece" => self.ece,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub metric: String,
    /// Seeds on which the metric was defined.
    pub n: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation (n − 1); 0 for a single seed.
    pub std: Option<f64>,
}

/// Mean and sample std of every (method, metric) pair over the defined
/// per-seed values, methods in first-seen order.
pub fn aggregate(rows: &[MetricRow]) -> Vec<AggregateRow> {
    let mut order: Vec<&str> = Vec::new();
    let mut by_method: BTreeMap<&str, Vec<&MetricRow>> = BTreeMap::new();
    for r in rows {
        if !by_method.contains_key(r.method.as_str()) {
            order.push(&r.method);
        }
        by_method.entry(&r.method).or_default().push(r);
    }
    let mut out = Vec::new();
    for m in order {
        for metric in METRIC_NAMES {
            let vals: Vec<f64> = by_method[m].iter().filter_map(|r| r.get(metric)).collect();
            let (mean, std) = mean_std(&vals);
            out.push(AggregateRow { method: m.to_string(), metric: metric.to_string(), n: vals.len(), mean, std });
        }
    }
    out
}

pub fn mean_std(vals: &[f64]) -> (Option<f64>, Option<f64>) {
    if vals.is_empty() {
        return (None, None);
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let std = if vals.len() < 2 { 0.0 } else { (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() };
    (Some(mean), Some(std))
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn per_seed_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from("seed,method,f1,g_mean,auprc,ece\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{},{}\n", r.seed, r.method, cell(r.f1), cell(r.g_mean), cell(r.auprc), cell(r.ece)));
    }
    s
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut s = String::from("method,metric,n,mean,std\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.method, r.metric, r.n, cell(r.mean), cell(r.std)));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub seed: u64,
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub train_counts: (usize, usize),
    pub calibration_counts: (usize, usize),
    pub test_counts: (usize, usize),
    pub temperature: Option<f64>,
    pub final_p1_hat: f64,
    pub final_regret: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub tool: String,
    pub version: String,
    pub config: serde_json::Value,
    pub per_seed: Vec<MetricRow>,
    pub aggregate: Vec<AggregateRow>,
    pub seeds: Vec<SeedSummary>,
    pub failures: Vec<Failure>,
}

//! CSV in and out. The header row is required; every column other than
//! the label column is a numeric feature.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use obil_core::dataset::LabeledDataset;
use serde::Serialize;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IngestSummary {
    pub n: usize,
    pub d: usize,
    pub imbalance_ratio: f64,
}

pub fn ingest_csv(path: &Path, label_column: &str, positive_value: &str) -> Result<(LabeledDataset, IngestSummary)> {
    let file = File::open(path).map_err(CliError::io(path))?;
    ingest_reader(file, label_column, positive_value)
}

/// Rows are reported 1-based, counting data rows only.
pub fn ingest_reader<R: Read>(reader: R, label_column: &str, positive_value: &str) -> Result<(LabeledDataset, IngestSummary)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| CliError::Schema(format!("unreadable header: {e}")))?.clone();
    if headers.is_empty() {
        return Err(CliError::Schema("missing header row".into()));
    }
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| CliError::Schema(format!("label column '{label_column}' not in header")))?;
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&i| i != label_idx).collect();
    if feature_cols.is_empty() {
        return Err(CliError::Schema("no feature columns".into()));
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| CliError::Parse { row, column: String::new(), message: e.to_string() })?;
        for &c in &feature_cols {
            let cell = &record[c];
            let v: f64 = cell.parse().map_err(|_| CliError::Parse {
                row,
                column: headers[c].to_string(),
                message: format!("'{cell}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(CliError::Parse { row, column: headers[c].to_string(), message: format!("'{cell}' is not finite") });
            }
            features.push(v);
        }
        labels.push(u8::from(&record[label_idx] == positive_value));
    }
    if labels.is_empty() {
        return Err(CliError::Schema("no data rows".into()));
    }
    let data = LabeledDataset::new(feature_cols.len(), features, labels)?;
    let summary = IngestSummary { n: data.len(), d: data.dim(), imbalance_ratio: data.imbalance_ratio() };
    Ok((data, summary))
}

/// Writes `x0..x{d-1},label` with labels 0/1.
pub fn write_csv<W: Write>(data: &LabeledDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("x{j}")).collect();
    header.push("label".into());
    let csv_err = |e: csv::Error| CliError::Stage { stage: "write_csv".into(), message: e.to_string() };
    w.write_record(&header).map_err(csv_err)?;
    for (row, y) in data.iter() {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(y.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::Stage { stage: "write_csv".into(), message: e.to_string() })
}

pub fn write_csv_file(data: &LabeledDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(CliError::io(path))?;
    write_csv(data, std::io::BufWriter::new(file))
}

//! Training metrics rows, their CSV encoding and seed-level aggregation.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Exact CSV header, in column order.
pub const CSV_HEADER: [&str; 8] = [
    "gradient_step",
    "context_index",
    "kappa",
    "success_rate",
    "mean_undiscounted_return",
    "mean_discounted_entreg_return",
    "exact_value",
    "wall_time_s",
];

/// One logged gradient step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub gradient_step: usize,
    pub context_index: usize,
    pub kappa: f64,
    pub success_rate: f64,
    pub mean_undiscounted_return: f64,
    pub mean_discounted_entreg_return: f64,
    /// Empty column when not computed.
    pub exact_value: Option<f64>,
    /// Empty column unless timing was requested; timing makes output non-reproducible.
    pub wall_time_s: Option<f64>,
}

pub fn write_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    writer.write_record(CSV_HEADER)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

/// Mean and standard error (`sample std / sqrt(n)`); the error is 0 for `n < 2`.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Final-step statistics over seeds for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub beta: f64,
    pub n_seeds: usize,
    pub kappa_mean: f64,
    pub kappa_stderr: f64,
    pub kappa_median: f64,
    pub success_rate_mean: f64,
    pub return_mean: f64,
    pub return_stderr: f64,
    pub entreg_return_mean: f64,
    pub entreg_return_stderr: f64,
}

impl SummaryRow {
    /// Aggregates the last row of each per-seed table. Seeds with no rows are skipped.
    pub fn from_runs(label: &str, beta: f64, runs: &[Vec<MetricsRow>]) -> Self {
        let finals: Vec<&MetricsRow> = runs.iter().filter_map(|r| r.last()).collect();
        let col = |f: fn(&MetricsRow) -> f64| finals.iter().map(|r| f(r)).collect::<Vec<_>>();
        let kappa = col(|r| r.kappa);
        let (kappa_mean, kappa_stderr) = mean_stderr(&kappa);
        let (success_rate_mean, _) = mean_stderr(&col(|r| r.success_rate));
        let (return_mean, return_stderr) = mean_stderr(&col(|r| r.mean_undiscounted_return));
        let (entreg_return_mean, entreg_return_stderr) =
            mean_stderr(&col(|r| r.mean_discounted_entreg_return));
        Self {
            label: label.to_string(),
            beta,
            n_seeds: finals.len(),
            kappa_mean,
            kappa_stderr,
            kappa_median: median(&kappa),
            success_rate_mean,
            return_mean,
            return_stderr,
            entreg_return_mean,
            entreg_return_stderr,
        }
    }
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_summary_csv<R: Read>(input: R) -> Result<Vec<SummaryRow>> {
    let mut reader = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

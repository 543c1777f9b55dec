//! Forecast scoring: mean squared and mean absolute error accumulated in
//! f64 regardless of the model's compute width, plus the per-seed results
//! table with mean ± std aggregation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// MSE and MAE over two equal-length flat slices. Layout does not matter:
/// every element counts once, so a batched [B, P, V] block scores the same
/// as its flattened vector.
pub fn compute_metrics(predictions: &[f64], targets: &[f64]) -> Result<(f64, f64)> {
    if predictions.len() != targets.len() {
        return Err(Error::Shape(format!(
            "predictions have {} values, targets {}",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Contract("cannot score zero predictions".into()));
    }
    let mut acc = MetricAccumulator::new();
    acc.extend(predictions, targets)?;
    Ok(acc.finish())
}

/// Streaming form of `compute_metrics` for evaluation loops that score one
/// batch at a time.
#[derive(Debug, Default, Clone)]
pub struct MetricAccumulator {
    sq_sum: f64,
    abs_sum: f64,
    count: usize,
}

impl MetricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn extend(&mut self, predictions: &[f64], targets: &[f64]) -> Result<()> {
        if predictions.len() != targets.len() {
            return Err(Error::Shape(format!(
                "predictions have {} values, targets {}",
                predictions.len(),
                targets.len()
            )));
        }
        for (p, t) in predictions.iter().zip(targets) {
            let e = p - t;
            self.sq_sum += e * e;
            self.abs_sum += e.abs();
        }
        self.count += predictions.len();
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// (MSE, MAE); NaN if nothing was accumulated.
    pub fn finish(&self) -> (f64, f64) {
        let n = self.count as f64;
        (self.sq_sum / n, self.abs_sum / n)
    }
}

/// `0.366±2e-4`: three decimals for the mean, one significant figure for the
/// spread.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.3}±{std:.0e}")
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsRow {
    pub dataset: String,
    pub pred_len: usize,
    pub seed: u64,
    pub mse: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsAggregate {
    pub dataset: String,
    pub pred_len: usize,
    pub seeds: usize,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub mae_mean: f64,
    pub mae_std: f64,
}

/// Per-seed rows plus mean ± std summaries grouped by (dataset, horizon),
/// in first-seen order.
#[derive(Debug, Default, Clone)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl MetricsTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: MetricsRow) -> Result<()> {
        if !(row.mse >= 0.0 && row.mae >= 0.0) {
            return Err(Error::Contract(format!(
                "negative or non-finite metrics for {} P={} seed {}: mse {}, mae {}",
                row.dataset, row.pred_len, row.seed, row.mse, row.mae
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn aggregates(&self) -> Vec<MetricsAggregate> {
        let mut groups: Vec<(String, usize)> = Vec::new();
        for r in &self.rows {
            let key = (r.dataset.clone(), r.pred_len);
            if !groups.contains(&key) {
                groups.push(key);
            }
        }
        groups
            .into_iter()
            .map(|(dataset, pred_len)| {
                let members: Vec<&MetricsRow> = self
                    .rows
                    .iter()
                    .filter(|r| r.dataset == dataset && r.pred_len == pred_len)
                    .collect();
                let (mse_mean, mse_std) =
                    mean_std(&members.iter().map(|r| r.mse).collect::<Vec<_>>());
                let (mae_mean, mae_std) =
                    mean_std(&members.iter().map(|r| r.mae).collect::<Vec<_>>());
                MetricsAggregate {
                    dataset,
                    pred_len,
                    seeds: members.len(),
                    mse_mean,
                    mse_std,
                    mae_mean,
                    mae_std,
                }
            })
            .collect()
    }

    /// Tab-separated text: one line per seed, then one `mean` line per group.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("dataset\tpred_len\tseed\tmse\tmae\n");
        for r in &self.rows {
            writeln!(
                out,
                "{}\t{}\t{}\t{:.6}\t{:.6}",
                r.dataset, r.pred_len, r.seed, r.mse, r.mae
            )
            .expect("string write");
        }
        for a in self.aggregates() {
            writeln!(
                out,
                "{}\t{}\tmean({})\t{}\t{}",
                a.dataset,
                a.pred_len,
                a.seeds,
                format_mean_std(a.mse_mean, a.mse_std),
                format_mean_std(a.mae_mean, a.mae_std)
            )
            .expect("string write");
        }
        out
    }
}

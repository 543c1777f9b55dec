//! CSV loading, chronological splits, global standardization, and the
//! channel-independent window dataset. All statistics are computed in f64.
//!
//! Split convention: validation and test windows may reach their history back
//! across the split boundary, so a segment starting at row `s` owns forecast
//! anchors in [s, segment_end - horizon] while its histories read rows as far
//! back as `s - n`.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A multivariate series: `values` is row-major [rows, vars], timestamps kept
/// only for ordering diagnostics.
#[derive(Debug, Clone)]
pub struct SeriesTable {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub rows: usize,
}

impl SeriesTable {
    pub fn vars(&self) -> usize {
        self.names.len()
    }

    pub fn value(&self, row: usize, var: usize) -> f64 {
        self.values[row * self.names.len() + var]
    }

    pub fn from_columns(names: Vec<String>, columns: &[Vec<f64>]) -> Result<Self> {
        if names.len() != columns.len() || columns.is_empty() {
            return Err(Error::Data("column names and columns must match".into()));
        }
        let rows = columns[0].len();
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::Data("columns have unequal lengths".into()));
        }
        let mut values = Vec::with_capacity(rows * names.len());
        for r in 0..rows {
            for c in columns {
                values.push(c[r]);
            }
        }
        Ok(SeriesTable { names, values, rows })
    }
}

/// First column is a timestamp, remaining columns are variables. Rows with
/// missing cells are dropped with a warning; unparseable numbers abort with
/// the file line and column name.
pub fn load_csv(path: &Path) -> Result<SeriesTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader.headers().map_err(Error::Csv)?.clone();
    if headers.len() < 2 {
        return Err(Error::Data(format!(
            "{} needs a timestamp column plus at least one variable",
            path.display()
        )));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let vars = names.len();

    let mut values = Vec::new();
    let mut rows = 0usize;
    let mut dropped = 0usize;
    let mut prev_stamp: Option<String> = None;
    let mut warned_order = false;

    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(Error::Csv)?;
        let line = idx + 2; // header occupies line 1
        if record.len() != vars + 1 || record.iter().any(|f| f.trim().is_empty()) {
            dropped += 1;
            continue;
        }
        let stamp = record[0].to_string();
        if let Some(prev) = &prev_stamp {
            if !warned_order && stamp < *prev {
                log::warn!(
                    "{}: timestamps are not non-decreasing at line {line} ({stamp} after {prev})",
                    path.display()
                );
                warned_order = true;
            }
        }
        prev_stamp = Some(stamp);
        for (c, field) in record.iter().skip(1).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "{}: line {line}, column '{}': cannot parse '{}' as a number",
                    path.display(),
                    names[c],
                    field
                ))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if dropped > 0 {
        log::warn!("{}: dropped {dropped} rows with missing cells", path.display());
    }
    if rows == 0 {
        return Err(Error::Data(format!("{} contains no complete data rows", path.display())));
    }
    Ok(SeriesTable { names, values, rows })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitSpec {
    /// Fractions of the row count, in order (train, val, test).
    Ratios(f64, f64, f64),
    /// Absolute row boundaries: train = [0, train_end), val = [train_end,
    /// val_end), test = [val_end, test_end).
    Fixed { train_end: usize, val_end: usize, test_end: usize },
}

/// ETTh-style hourly border preset (12/4/4 months of hourly rows).
pub const ETT_HOURLY: SplitSpec = SplitSpec::Fixed {
    train_end: 12 * 30 * 24,
    val_end: 16 * 30 * 24,
    test_end: 20 * 30 * 24,
};

/// ETTm-style quarter-hourly border preset.
pub const ETT_QUARTER_HOURLY: SplitSpec = SplitSpec::Fixed {
    train_end: 12 * 30 * 24 * 4,
    val_end: 16 * 30 * 24 * 4,
    test_end: 20 * 30 * 24 * 4,
};

/// One chronological segment: forecast anchors live in
/// [anchor_start, anchor_end); each anchor t pairs history rows [t-n, t) with
/// target rows [t, t+horizon).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub anchor_start: usize,
    pub anchor_end: usize,
}

impl Segment {
    pub fn window_count(&self) -> usize {
        self.anchor_end - self.anchor_start
    }
}

/// Resolves a split spec into absolute (train_end, val_end, test_end) row
/// borders for a table of `rows` rows.
pub fn borders(rows: usize, spec: SplitSpec) -> Result<(usize, usize, usize)> {
    match spec {
        SplitSpec::Ratios(a, b, c) => {
            if !(a > 0.0 && b > 0.0 && c > 0.0) || a + b + c > 1.0 + 1e-9 {
                return Err(Error::Config(format!(
                    "split ratios ({a}, {b}, {c}) must all be positive and sum to at most 1"
                )));
            }
            let r = rows as f64;
            let train_end = (r * a) as usize;
            let val_end = train_end + (r * b) as usize;
            let test_end = if a + b + c >= 1.0 - 1e-9 {
                rows
            } else {
                val_end + (r * c) as usize
            };
            Ok((train_end, val_end, test_end))
        }
        SplitSpec::Fixed { train_end, val_end, test_end } => {
            if !(train_end < val_end && val_end < test_end) {
                return Err(Error::Config(format!(
                    "split borders must increase: {train_end} / {val_end} / {test_end}"
                )));
            }
            if test_end > rows {
                return Err(Error::Data(format!(
                    "table has {rows} rows but the split preset needs {test_end}"
                )));
            }
            Ok((train_end, val_end, test_end))
        }
    }
}

/// Resolves a split spec into (train, val, test) segments, checking that every
/// segment can form at least one window of n history + horizon target rows.
pub fn split(table: &SeriesTable, spec: SplitSpec, n: usize, horizon: usize) -> Result<[Segment; 3]> {
    if n == 0 || horizon == 0 {
        return Err(Error::Config("history length and horizon must be positive".into()));
    }
    let (train_end, val_end, test_end) = borders(table.rows, spec)?;

    let segments = [
        Segment { anchor_start: n, anchor_end: train_end.saturating_sub(horizon) + 1 },
        Segment { anchor_start: train_end, anchor_end: val_end.saturating_sub(horizon) + 1 },
        Segment { anchor_start: val_end, anchor_end: test_end.saturating_sub(horizon) + 1 },
    ];
    let labels = ["train", "validation", "test"];
    for (seg, label) in segments.iter().zip(labels) {
        if seg.anchor_end <= seg.anchor_start {
            return Err(Error::Config(format!(
                "{label} split cannot fit a single window of {n} history + {horizon} target rows"
            )));
        }
    }
    Ok(segments)
}

/// Per-variable standardization fitted on the training rows only.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn fit(table: &SeriesTable, train_rows: usize) -> Result<Self> {
        if train_rows == 0 || train_rows > table.rows {
            return Err(Error::Config(format!(
                "scaler needs 1..={} training rows, got {train_rows}",
                table.rows
            )));
        }
        let v = table.vars();
        let mut mean = vec![0.0; v];
        for r in 0..train_rows {
            for c in 0..v {
                mean[c] += table.value(r, c);
            }
        }
        for m in &mut mean {
            *m /= train_rows as f64;
        }
        let mut std = vec![0.0; v];
        for r in 0..train_rows {
            for c in 0..v {
                let d = table.value(r, c) - mean[c];
                std[c] += d * d;
            }
        }
        for s in &mut std {
            *s = (*s / train_rows as f64).sqrt();
            // constant columns pass through unscaled
            if *s < 1e-12 {
                *s = 1.0;
            }
        }
        Ok(Scaler { mean, std })
    }

    pub fn transform(&self, table: &SeriesTable) -> SeriesTable {
        let v = table.vars();
        let mut values = table.values.clone();
        for r in 0..table.rows {
            for c in 0..v {
                values[r * v + c] = (values[r * v + c] - self.mean[c]) / self.std[c];
            }
        }
        SeriesTable { names: table.names.clone(), values, rows: table.rows }
    }

    /// Maps model-scale values for one variable back to raw units.
    pub fn invert(&self, var: usize, xs: &mut [f64]) {
        for x in xs {
            *x = *x * self.std[var] + self.mean[var];
        }
    }
}

/// Per-window standardization over the history rows (population variance,
/// floored deviation). Targets and predictions share the same state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceNormState {
    pub mean: f64,
    pub std: f64,
}

pub const INSTANCE_STD_FLOOR: f64 = 1e-5;

impl InstanceNormState {
    pub fn fit(history: &[f64]) -> Self {
        let n = history.len() as f64;
        let mean = history.iter().sum::<f64>() / n;
        let var = history.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        InstanceNormState { mean, std: var.sqrt().max(INSTANCE_STD_FLOOR) }
    }

    pub fn normalize(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|x| (x - self.mean) / self.std).collect()
    }

    pub fn denormalize(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|x| x * self.std + self.mean).collect()
    }
}

/// Channel-independent view of a segment: sample i pairs variable
/// (i % vars) with anchor (i / vars). Values come pre-scaled from `table`.
#[derive(Debug, Clone)]
pub struct WindowDataset<'a> {
    pub table: &'a SeriesTable,
    pub segment: Segment,
    pub n: usize,
    pub horizon: usize,
}

/// One training/eval sample: normalized history and target plus the state
/// needed to map predictions back.
#[derive(Debug, Clone)]
pub struct WindowSample {
    pub history: Vec<f64>,
    pub target: Vec<f64>,
    pub norm: InstanceNormState,
    pub anchor: usize,
    pub var: usize,
}

impl<'a> WindowDataset<'a> {
    pub fn new(table: &'a SeriesTable, segment: Segment, n: usize, horizon: usize) -> Self {
        debug_assert!(segment.anchor_start >= n);
        WindowDataset { table, segment, n, horizon }
    }

    pub fn len(&self) -> usize {
        self.segment.window_count() * self.table.vars()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample(&self, i: usize) -> WindowSample {
        let vars = self.table.vars();
        let var = i % vars;
        let anchor = self.segment.anchor_start + i / vars;
        let mut history = Vec::with_capacity(self.n);
        for r in anchor - self.n..anchor {
            history.push(self.table.value(r, var));
        }
        let mut target = Vec::with_capacity(self.horizon);
        for r in anchor..anchor + self.horizon {
            target.push(self.table.value(r, var));
        }
        let norm = InstanceNormState::fit(&history);
        WindowSample {
            history: norm.normalize(&history),
            target: norm.normalize(&target),
            norm,
            anchor,
            var,
        }
    }
}

/// Deterministic multi-variable test series: sinusoid mixtures with a shared
/// phase structure plus light noise, so short histories genuinely predict the
/// future.
pub fn synthetic_series(rows: usize, vars: usize, rng: &mut ChaCha8Rng) -> SeriesTable {
    let names = (0..vars).map(|v| format!("var{v}")).collect();
    let mut values = Vec::with_capacity(rows * vars);
    let params: Vec<(f64, f64, f64, f64)> = (0..vars)
        .map(|_| {
            (
                rng.gen_range(8.0..40.0),
                rng.gen_range(20.0..90.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.5..2.0),
            )
        })
        .collect();
    for t in 0..rows {
        for (p1, p2, phase, amp) in &params {
            let x = t as f64;
            let clean = amp * ((x * std::f64::consts::TAU / p1 + phase).sin()
                + 0.5 * (x * std::f64::consts::TAU / p2).cos());
            values.push(clean + rng.gen_range(-0.02..0.02));
        }
    }
    SeriesTable { names, values, rows }
}

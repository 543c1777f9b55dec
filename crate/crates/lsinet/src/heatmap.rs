//! Connection-matrix export: N x N text matrices (one row per line, values
//! space-separated) with a small sidecar recording the geometry and the
//! achieved gate sparsity, plus the structure detectors used to judge
//! whether a trained matrix shows both isolated points and blocks.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::sscl::ConnectionMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapKind {
    /// Connection probabilities c1, values in [0, 1].
    Probs,
    /// Thresholded binary gates, values in {0, 1}.
    Hard,
}

impl HeatmapKind {
    pub fn label(self) -> &'static str {
        match self {
            HeatmapKind::Probs => "probs",
            HeatmapKind::Hard => "hard",
        }
    }
}

impl FromStr for HeatmapKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probs" => Ok(HeatmapKind::Probs),
            "hard" => Ok(HeatmapKind::Hard),
            other => Err(Error::Config(format!(
                "heatmap kind must be 'probs' or 'hard', got '{other}'"
            ))),
        }
    }
}

pub fn matrix_values(cm: &ConnectionMatrix, kind: HeatmapKind) -> Vec<f64> {
    match kind {
        HeatmapKind::Probs => cm.c1(),
        HeatmapKind::Hard => cm.z_hard.clone(),
    }
}

/// Writes `heatmap_b{block}_h{head}_{kind}.txt` and its `.meta` sidecar into
/// `dir`; returns both paths. The sidecar sparsity is always the binary-gate
/// ones fraction, so for a hard export it equals the ones count of the file
/// itself divided by N^2.
pub fn write_heatmap(
    dir: &Path,
    block: usize,
    head: usize,
    kind: HeatmapKind,
    cm: &ConnectionMatrix,
) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let stem = format!("heatmap_b{block}_h{head}_{}", kind.label());
    let matrix_path = dir.join(format!("{stem}.txt"));
    let meta_path = dir.join(format!("{stem}.meta"));
    let values = matrix_values(cm, kind);
    std::fs::write(&matrix_path, ConnectionMatrix::to_text(&values, cm.n))?;
    let mut meta = String::new();
    writeln!(meta, "n = {}", cm.n).expect("string write");
    writeln!(meta, "block = {block}").expect("string write");
    writeln!(meta, "head = {head}").expect("string write");
    writeln!(meta, "kind = {}", kind.label()).expect("string write");
    writeln!(meta, "sparsity = {}", cm.sparsity()).expect("string write");
    std::fs::write(&meta_path, meta)?;
    Ok((matrix_path, meta_path))
}

/// Parses a matrix written by `write_heatmap`; checks squareness.
pub fn parse_matrix(text: &str) -> Result<(Vec<f64>, usize)> {
    let mut values = Vec::new();
    let mut n = 0usize;
    for (i, line) in text.lines().enumerate() {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| Error::Data(format!("heatmap row {}: bad value '{tok}'", i + 1)))
            })
            .collect::<Result<_>>()?;
        if i == 0 {
            n = row.len();
        } else if row.len() != n {
            return Err(Error::Data(format!(
                "heatmap row {} has {} values, expected {n}",
                i + 1,
                row.len()
            )));
        }
        values.extend(row);
    }
    if n == 0 || values.len() != n * n {
        return Err(Error::Data(format!(
            "heatmap is {}x{} but holds {} values",
            n,
            n,
            values.len()
        )));
    }
    Ok((values, n))
}

fn at(values: &[f64], n: usize, r: usize, c: usize) -> f64 {
    values[r * n + c]
}

/// Some 2x2 window is all ones.
pub fn has_block(values: &[f64], n: usize) -> bool {
    for r in 0..n.saturating_sub(1) {
        for c in 0..n.saturating_sub(1) {
            if at(values, n, r, c) == 1.0
                && at(values, n, r, c + 1) == 1.0
                && at(values, n, r + 1, c) == 1.0
                && at(values, n, r + 1, c + 1) == 1.0
            {
                return true;
            }
        }
    }
    false
}

/// Some cell is 1 while every in-bounds 4-neighbor is 0.
pub fn has_isolated_point(values: &[f64], n: usize) -> bool {
    for r in 0..n {
        for c in 0..n {
            if at(values, n, r, c) != 1.0 {
                continue;
            }
            let up = r == 0 || at(values, n, r - 1, c) == 0.0;
            let down = r + 1 == n || at(values, n, r + 1, c) == 0.0;
            let left = c == 0 || at(values, n, r, c - 1) == 0.0;
            let right = c + 1 == n || at(values, n, r, c + 1) == 0.0;
            if up && down && left && right {
                return true;
            }
        }
    }
    false
}

/// (has a 2x2 all-ones block, has an isolated one) on the binary gates.
pub fn scatter_and_block_pattern(cm: &ConnectionMatrix) -> (bool, bool) {
    (has_block(&cm.z_hard, cm.n), has_isolated_point(&cm.z_hard, cm.n))
}

//! On-disk formats.
//!
//! - `panel.csv` — long format `t,i,j,observed,value` (1-based indices, one
//!   row per cell and time; unobserved cells carry the placeholder 0).
//! - `row_network.csv` / `col_network.csv` — edge lists `src,dst` (1-based).
//! - `covariates.csv` — `i,x1,...,xp`.
//! - `truth.json` — generator coefficients with the intercept stored as
//!   low-rank factors; `truth_b.csv` holds the dense matrix.
//! - `fit.json` — estimation report; `fit_b.csv` holds the fitted intercept.
//!
//! Numeric values use the shortest round-trip decimal representation.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use mnar_core::model::{Covariates, PanelSeries};

pub fn write_text(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).with_context(|| format!("writing {}", path.display()))
}

// ---------------------------------------------------------------------------
// panel
// ---------------------------------------------------------------------------

pub fn panel_to_csv(panel: &PanelSeries) -> String {
    let mut out = String::from("t,i,j,observed,value\n");
    for t in 0..panel.horizon() {
        for i in 0..panel.n1() {
            for j in 0..panel.n2() {
                let observed = panel.mask()[t][(i, j)] as u8;
                let value = panel.responses()[t][(i, j)];
                let _ = writeln!(out, "{},{},{},{},{}", t + 1, i + 1, j + 1, observed, value);
            }
        }
    }
    out
}

pub fn read_panel(path: &Path) -> Result<PanelSeries> {
    let mut rdr = csv::Reader::from_path(path)
        .with_context(|| format!("opening panel {}", path.display()))?;
    let mut rows: Vec<(usize, usize, usize, f64, f64)> = Vec::new();
    let (mut max_t, mut max_i, mut max_j) = (0usize, 0usize, 0usize);
    for record in rdr.records() {
        let record = record?;
        if record.len() != 5 {
            return Err(anyhow!("panel rows need 5 fields, got {}", record.len()));
        }
        let t: usize = record[0].parse()?;
        let i: usize = record[1].parse()?;
        let j: usize = record[2].parse()?;
        let observed: f64 = record[3].parse()?;
        let value: f64 = record[4].parse()?;
        if t == 0 || i == 0 || j == 0 {
            return Err(anyhow!("panel indices are 1-based"));
        }
        max_t = max_t.max(t);
        max_i = max_i.max(i);
        max_j = max_j.max(j);
        rows.push((t - 1, i - 1, j - 1, observed, value));
    }
    if rows.is_empty() {
        return Err(anyhow!("panel {} is empty", path.display()));
    }
    let mut responses = vec![DMatrix::zeros(max_i, max_j); max_t];
    let mut mask = vec![DMatrix::zeros(max_i, max_j); max_t];
    for (t, i, j, observed, value) in rows {
        responses[t][(i, j)] = value;
        mask[t][(i, j)] = observed;
    }
    Ok(PanelSeries::new(responses, mask)?)
}

/// Plain dense grid of one frame, one row per matrix row.
pub fn frame_to_dense_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", m[(i, j)]);
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// networks
// ---------------------------------------------------------------------------

pub fn edges_to_csv(adj: &DMatrix<f64>) -> String {
    let mut out = String::from("src,dst\n");
    for i in 0..adj.nrows() {
        for j in 0..adj.ncols() {
            if adj[(i, j)] == 1.0 {
                let _ = writeln!(out, "{},{}", i + 1, j + 1);
            }
        }
    }
    out
}

pub fn read_edges(path: &Path, n: usize) -> Result<DMatrix<f64>> {
    let mut rdr = csv::Reader::from_path(path)
        .with_context(|| format!("opening edge list {}", path.display()))?;
    let mut adj = DMatrix::zeros(n, n);
    for record in rdr.records() {
        let record = record?;
        let src: usize = record[0].parse()?;
        let dst: usize = record[1].parse()?;
        if src == 0 || dst == 0 || src > n || dst > n {
            return Err(anyhow!("edge ({src},{dst}) outside 1..={n}"));
        }
        adj[(src - 1, dst - 1)] = 1.0;
    }
    Ok(adj)
}

// ---------------------------------------------------------------------------
// covariates
// ---------------------------------------------------------------------------

pub fn covariates_to_csv(cov: &Covariates) -> String {
    let p = cov.dim();
    let mut out = String::from("i");
    for k in 1..=p {
        let _ = write!(out, ",x{k}");
    }
    out.push('\n');
    for i in 0..cov.n_rows() {
        let _ = write!(out, "{}", i + 1);
        for k in 0..p {
            let _ = write!(out, ",{}", cov.x()[(i, k)]);
        }
        out.push('\n');
    }
    out
}

pub fn read_covariates(path: &Path) -> Result<Covariates> {
    let mut rdr = csv::Reader::from_path(path)
        .with_context(|| format!("opening covariates {}", path.display()))?;
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let i: usize = record[0].parse()?;
        let values: Vec<f64> = record
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()?;
        rows.push((i - 1, values));
    }
    if rows.is_empty() {
        return Err(anyhow!("covariates {} are empty", path.display()));
    }
    rows.sort_by_key(|(i, _)| *i);
    let n1 = rows.len();
    let p = rows[0].1.len();
    let mut x = DMatrix::zeros(n1, p);
    for (i, values) in rows {
        for (k, v) in values.into_iter().enumerate() {
            x[(i, k)] = v;
        }
    }
    Ok(Covariates::new(x)?)
}

// ---------------------------------------------------------------------------
// dense matrices (long format sidecars)
// ---------------------------------------------------------------------------

pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::from("i,j,value\n");
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let _ = writeln!(out, "{},{},{}", i + 1, j + 1, m[(i, j)]);
        }
    }
    out
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv::Reader::from_path(path)
        .with_context(|| format!("opening matrix {}", path.display()))?;
    let mut cells = Vec::new();
    let (mut max_i, mut max_j) = (0usize, 0usize);
    for record in rdr.records() {
        let record = record?;
        let i: usize = record[0].parse()?;
        let j: usize = record[1].parse()?;
        let v: f64 = record[2].parse()?;
        max_i = max_i.max(i);
        max_j = max_j.max(j);
        cells.push((i - 1, j - 1, v));
    }
    let mut m = DMatrix::zeros(max_i, max_j);
    for (i, j, v) in cells {
        m[(i, j)] = v;
    }
    Ok(m)
}

// ---------------------------------------------------------------------------
// parameter bundles
// ---------------------------------------------------------------------------

/// Generator truth: coefficients plus the intercept's low-rank factors.
#[derive(Debug, Serialize, Deserialize)]
pub struct TruthBundle {
    pub lambda: Vec<f64>,
    pub gamma: Vec<f64>,
    /// p × N2, row major.
    pub beta: Vec<Vec<f64>>,
    /// Left factor of the intercept (N1 × rank).
    pub b_left: Vec<Vec<f64>>,
    /// Right factor of the intercept (N2 × rank); B = left · rightᵀ.
    pub b_right: Vec<Vec<f64>>,
    pub rank_b: usize,
    pub alpha: Vec<f64>,
    pub probs: Vec<f64>,
}

pub fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

pub fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(anyhow!("empty matrix in bundle"));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(anyhow!("ragged matrix in bundle"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// Rank-limited factorization of a matrix via its SVD, preserving the
/// low-rank witness in serialized bundles.
pub fn low_rank_factors(m: &DMatrix<f64>, rank: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap()
    });
    let kept = order.into_iter().take(rank.max(1)).collect::<Vec<_>>();
    let left = DMatrix::from_fn(m.nrows(), kept.len(), |i, r| {
        u[(i, kept[r])] * svd.singular_values[kept[r]]
    });
    let right = DMatrix::from_fn(m.ncols(), kept.len(), |j, r| v_t[(kept[r], j)]);
    (left, right)
}

/// Estimation report written by the `estimate` command.
#[derive(Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub n1: usize,
    pub n2: usize,
    pub horizon: usize,
    pub mechanism: String,
    pub alpha: Vec<f64>,
    pub probs: Vec<f64>,
    pub lambda_raw: Vec<f64>,
    pub gamma_raw: Vec<f64>,
    pub lambda: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
    pub b_rank: usize,
    pub singular_values: Vec<f64>,
    pub debias_rounds: usize,
    pub bias_sup_norms: Vec<f64>,
    pub contraction_violations: Vec<usize>,
    pub sigma2_condition: f64,
    /// In-sample RMSE of the rolling reconstruction on observed entries.
    pub observed_rmse: f64,
    pub iterations: usize,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
    pub nu1: f64,
    pub nu2: f64,
    pub nu3: f64,
    pub nu4: f64,
    pub mix_alpha: f64,
    pub timings_ms: std::collections::BTreeMap<String, u128>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_text(path, &(text + "\n"))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

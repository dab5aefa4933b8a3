//! Core domain types and the one-step conditional-mean map.
//!
//! The model for an `N1×N2` panel `Y_t` with row network `W1` and column
//! network `W2` is
//!
//! ```text
//! Y_t = Λ W1 Y_{t-1} + Y_{t-1} W2 Γ + X β + B + E_t,
//! ```
//!
//! where `Λ = diag(λ)` carries per-row autoregressive effects, `Γ = diag(γ)`
//! per-column effects, `X` is an `N1×p` covariate matrix, `B` a low-rank
//! intercept, and `E_t` white noise. `W1` is the row-normalized adjacency of
//! the row subjects and `W2` the column-normalized adjacency of the column
//! subjects.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Ordered sequence of response matrices with an aligned binary observation
/// mask. Unobserved entries are stored as the placeholder value 0 and are
/// only reachable through [`PanelSeries::observed`].
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSeries {
    n1: usize,
    n2: usize,
    horizon: usize,
    responses: Vec<DMatrix<f64>>,
    mask: Vec<DMatrix<f64>>,
}

impl PanelSeries {
    /// Build a panel from responses and a 0/1 mask of identical shapes.
    ///
    /// Masked-out response entries are overwritten with the placeholder 0 so
    /// that no downstream computation can read an unobserved value.
    pub fn new(mut responses: Vec<DMatrix<f64>>, mask: Vec<DMatrix<f64>>) -> Result<Self> {
        if responses.is_empty() || responses.len() != mask.len() {
            return Err(Error::Shape(format!(
                "panel needs equal, nonzero frame counts (got {} responses, {} masks)",
                responses.len(),
                mask.len()
            )));
        }
        let (n1, n2) = (responses[0].nrows(), responses[0].ncols());
        for (t, (y, r)) in responses.iter().zip(mask.iter()).enumerate() {
            if y.shape() != (n1, n2) || r.shape() != (n1, n2) {
                return Err(Error::Shape(format!("frame {t} is not {n1}x{n2}")));
            }
            if r.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Shape(format!("mask frame {t} has entries outside {{0,1}}")));
            }
        }
        for (y, r) in responses.iter_mut().zip(mask.iter()) {
            y.zip_apply(r, |v, m| {
                if m == 0.0 {
                    *v = 0.0;
                }
            });
        }
        let horizon = responses.len();
        Ok(Self { n1, n2, horizon, responses, mask })
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    /// Number of time frames T.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Response value at (t, i, j) if observed, `None` otherwise.
    pub fn observed(&self, t: usize, i: usize, j: usize) -> Option<f64> {
        (self.mask[t][(i, j)] == 1.0).then(|| self.responses[t][(i, j)])
    }

    /// Response frames with placeholder zeros at unobserved entries.
    pub fn responses(&self) -> &[DMatrix<f64>] {
        &self.responses
    }

    pub fn mask(&self) -> &[DMatrix<f64>] {
        &self.mask
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().map(|r| r.iter().filter(|&&v| v == 1.0).count()).sum()
    }
}

/// Row and column adjacency matrices together with their normalized weights.
///
/// `w1` is the row-normalized version of `a1` (each nonzero row sums to 1)
/// and `w2` the column-normalized version of `a2` (each nonzero column sums
/// to 1). Rows or columns of isolated nodes stay identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkPair {
    a1: DMatrix<f64>,
    a2: DMatrix<f64>,
    w1: DMatrix<f64>,
    w2: DMatrix<f64>,
    // nonzero structure, cached for sparse products
    w1_rows: Vec<Vec<(usize, f64)>>,
    w2_cols: Vec<Vec<(usize, f64)>>,
}

fn check_adjacency(a: &DMatrix<f64>, name: &str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::Shape(format!("{name} must be square, got {}x{}", a.nrows(), a.ncols())));
    }
    for i in 0..a.nrows() {
        if a[(i, i)] != 0.0 {
            return Err(Error::Shape(format!("{name} has nonzero diagonal at {i}")));
        }
    }
    if a.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Shape(format!("{name} must be binary")));
    }
    Ok(())
}

impl NetworkPair {
    /// Derive normalized weights from binary adjacency matrices.
    ///
    /// `w1[i,k] = a1[i,k] / d1_i` with `d1_i = Σ_k a1[i,k]`; rows with zero
    /// degree stay all-zero. `w2` follows the symmetric rule on columns.
    pub fn normalize_networks(a1: DMatrix<f64>, a2: DMatrix<f64>) -> Result<Self> {
        check_adjacency(&a1, "a1")?;
        check_adjacency(&a2, "a2")?;
        let mut w1 = a1.clone();
        for mut row in w1.row_iter_mut() {
            let d: f64 = row.iter().sum();
            if d > 0.0 {
                row /= d;
            }
        }
        let mut w2 = a2.clone();
        for mut col in w2.column_iter_mut() {
            let d: f64 = col.iter().sum();
            if d > 0.0 {
                col /= d;
            }
        }
        let w1_rows = (0..w1.nrows())
            .map(|i| {
                (0..w1.ncols()).filter(|&k| w1[(i, k)] != 0.0).map(|k| (k, w1[(i, k)])).collect()
            })
            .collect();
        let w2_cols = (0..w2.ncols())
            .map(|j| {
                (0..w2.nrows()).filter(|&k| w2[(k, j)] != 0.0).map(|k| (k, w2[(k, j)])).collect()
            })
            .collect();
        Ok(Self { a1, a2, w1, w2, w1_rows, w2_cols })
    }

    pub fn n1(&self) -> usize {
        self.w1.nrows()
    }

    pub fn n2(&self) -> usize {
        self.w2.nrows()
    }

    pub fn a1(&self) -> &DMatrix<f64> {
        &self.a1
    }

    pub fn a2(&self) -> &DMatrix<f64> {
        &self.a2
    }

    pub fn w1(&self) -> &DMatrix<f64> {
        &self.w1
    }

    pub fn w2(&self) -> &DMatrix<f64> {
        &self.w2
    }

    /// `W1 · m`, exploiting row sparsity of `W1`.
    pub fn w1_dot(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let (n2,) = (m.ncols(),);
        let mut out = DMatrix::zeros(self.n1(), n2);
        for (i, row) in self.w1_rows.iter().enumerate() {
            for &(k, w) in row {
                for j in 0..n2 {
                    out[(i, j)] += w * m[(k, j)];
                }
            }
        }
        out
    }

    /// `m · W2`, exploiting column sparsity of `W2`.
    pub fn dot_w2(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let n1 = m.nrows();
        let mut out = DMatrix::zeros(n1, self.n2());
        for (j, col) in self.w2_cols.iter().enumerate() {
            for &(k, w) in col {
                for i in 0..n1 {
                    out[(i, j)] += w * m[(i, k)];
                }
            }
        }
        out
    }

    /// `(W1 ∘ W1) · v` where `∘` squares entrywise.
    pub fn w1_sq_dot(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n1());
        for (i, row) in self.w1_rows.iter().enumerate() {
            out[i] = row.iter().map(|&(k, w)| w * w * v[k]).sum();
        }
        out
    }

    /// `(W2 ∘ W2)ᵀ · v`, i.e. per column j the sum `Σ_k w2[k,j]² v_k`.
    pub fn w2_sq_t_dot(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n2());
        for (j, col) in self.w2_cols.iter().enumerate() {
            out[j] = col.iter().map(|&(k, w)| w * w * v[k]).sum();
        }
        out
    }
}

/// Model coefficients: diagonal network effects, covariate coefficients,
/// and the low-rank intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub lambda: DVector<f64>,
    pub gamma: DVector<f64>,
    /// p × N2 covariate coefficient matrix.
    pub beta: DMatrix<f64>,
    /// N1 × N2 intercept matrix.
    pub intercept_b: DMatrix<f64>,
    /// Rank bound witnessed by the construction of `intercept_b`.
    pub rank_b: usize,
}

impl ModelParams {
    pub fn new(
        lambda: DVector<f64>,
        gamma: DVector<f64>,
        beta: DMatrix<f64>,
        intercept_b: DMatrix<f64>,
        rank_b: usize,
    ) -> Result<Self> {
        if intercept_b.nrows() != lambda.len() || intercept_b.ncols() != gamma.len() {
            return Err(Error::Shape(format!(
                "intercept is {}x{} but lambda/gamma have lengths {}/{}",
                intercept_b.nrows(),
                intercept_b.ncols(),
                lambda.len(),
                gamma.len()
            )));
        }
        if beta.ncols() != gamma.len() {
            return Err(Error::Shape(format!(
                "beta has {} columns, expected {}",
                beta.ncols(),
                gamma.len()
            )));
        }
        Ok(Self { lambda, gamma, beta, intercept_b, rank_b })
    }
}

/// Time-invariant covariates of the row subjects (first column all ones by
/// convention).
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    x: DMatrix<f64>,
}

impl Covariates {
    pub fn new(x: DMatrix<f64>) -> Result<Self> {
        if x.ncols() == 0 {
            return Err(Error::Shape("covariate matrix needs p >= 1".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("covariate matrix has non-finite entries".into()));
        }
        Ok(Self { x })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Projection onto the orthogonal complement of the column space of X,
    /// `I − X (XᵀX)⁻¹ Xᵀ`.
    pub fn complement_projector(&self) -> Result<DMatrix<f64>> {
        let xtx = self.x.transpose() * &self.x;
        let chol = xtx
            .cholesky()
            .ok_or_else(|| Error::Solve("XᵀX is singular; cannot form projector".into()))?;
        let solved = chol.solve(&self.x.transpose());
        Ok(DMatrix::identity(self.n_rows(), self.n_rows()) - &self.x * solved)
    }
}

/// One-step conditional mean `Λ W1 · prev + prev · W2 Γ + X β + B`.
pub fn conditional_mean(
    prev: &DMatrix<f64>,
    params: &ModelParams,
    nets: &NetworkPair,
    cov: &Covariates,
) -> Result<DMatrix<f64>> {
    let (n1, n2) = (params.lambda.len(), params.gamma.len());
    if prev.shape() != (n1, n2) {
        return Err(Error::Shape(format!(
            "prev is {}x{}, expected {n1}x{n2}",
            prev.nrows(),
            prev.ncols()
        )));
    }
    if nets.n1() != n1 || nets.n2() != n2 || cov.n_rows() != n1 {
        return Err(Error::Shape("networks/covariates do not match parameter dimensions".into()));
    }
    if cov.dim() != params.beta.nrows() {
        return Err(Error::Shape(format!(
            "beta has {} rows but X has {} columns",
            params.beta.nrows(),
            cov.dim()
        )));
    }
    let mut row_term = nets.w1_dot(prev);
    for i in 0..n1 {
        let l = params.lambda[i];
        for j in 0..n2 {
            row_term[(i, j)] *= l;
        }
    }
    let mut col_term = nets.dot_w2(prev);
    for j in 0..n2 {
        let g = params.gamma[j];
        for i in 0..n1 {
            col_term[(i, j)] *= g;
        }
    }
    Ok(row_term + col_term + cov.x() * &params.beta + &params.intercept_b)
}

/// Stationarity diagnostics for a coefficient pair.
#[derive(Debug, Clone)]
pub struct StationarityCheck {
    /// `max_i |λ_i|`.
    pub kappa1: f64,
    /// `max_j |γ_j|`.
    pub kappa2: f64,
    pub kappa_sum: f64,
    /// Whether `kappa1 + kappa2 < 1`.
    pub stationary: bool,
    /// Spectral radius of the vectorized companion operator, estimated by
    /// power iteration without forming the N1·N2 dimensional matrix.
    pub spectral_radius: f64,
}

/// Check the sufficient stationarity condition and estimate the spectral
/// radius of the companion operator `M ↦ Λ W1 M + M W2 Γ`.
pub fn check_stationarity(params: &ModelParams, nets: &NetworkPair) -> StationarityCheck {
    let kappa1 = params.lambda.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let kappa2 = params.gamma.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (n1, n2) = (nets.n1(), nets.n2());

    // deterministic, aperiodic start so the iteration is reproducible
    let mut m = DMatrix::from_fn(n1, n2, |i, j| 1.0 + ((3 * i + 7 * j) % 11) as f64 / 11.0);
    let norm0 = m.norm();
    if norm0 > 0.0 {
        m /= norm0;
    }
    let mut log_growth = Vec::with_capacity(200);
    let mut rho = 0.0;
    for it in 0..200 {
        let mut next = nets.w1_dot(&m);
        for i in 0..n1 {
            let l = params.lambda[i];
            for j in 0..n2 {
                next[(i, j)] *= l;
            }
        }
        let mut col = nets.dot_w2(&m);
        for j in 0..n2 {
            let g = params.gamma[j];
            for i in 0..n1 {
                col[(i, j)] *= g;
            }
        }
        next += col;
        let norm = next.norm();
        if norm == 0.0 {
            return StationarityCheck {
                kappa1,
                kappa2,
                kappa_sum: kappa1 + kappa2,
                stationary: kappa1 + kappa2 < 1.0,
                spectral_radius: 0.0,
            };
        }
        log_growth.push(norm.ln());
        m = next / norm;
        // geometric mean of the growth factors over the tail of the run
        let tail = &log_growth[log_growth.len() / 2..];
        let est = (tail.iter().sum::<f64>() / tail.len() as f64).exp();
        if it > 20 && (est - rho).abs() < 1e-8 {
            rho = est;
            break;
        }
        rho = est;
    }
    StationarityCheck {
        kappa1,
        kappa2,
        kappa_sum: kappa1 + kappa2,
        stationary: kappa1 + kappa2 < 1.0,
        spectral_radius: rho,
    }
}

//! Observation-probability estimation and inverse-probability weighting.
//!
//! The observation indicators are modelled per row: under MAR a logistic
//! regression on the design `(1, X_i)`, under UNI a single common rate.
//! The weighted response `Z_ijt = R_ijt Y_ijt / p̂_i` is conditionally
//! unbiased for `Y_ijt` and drives both estimation steps.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{Covariates, PanelSeries};
use crate::simulate::{logistic, Mechanism};

/// Probabilities below this floor abort weighting: the weights `1/p̂` would
/// dominate every sum.
pub const PROB_FLOOR: f64 = 1e-3;

/// Fitted observation model: logistic coefficients on `(1, X_i)` and the
/// per-row probabilities they imply.
#[derive(Debug, Clone)]
pub struct MissingModel {
    pub alpha: DVector<f64>,
    pub probs: DVector<f64>,
    pub mechanism: Mechanism,
}

/// Per-row sufficient statistics of the mask: number of successes and the
/// number of Bernoulli draws.
fn mask_counts(masks: &[DMatrix<f64>]) -> Result<(DVector<f64>, f64)> {
    if masks.is_empty() {
        return Err(Error::Invalid("mask sequence is empty".into()));
    }
    let n1 = masks[0].nrows();
    let per_row = (masks.len() * masks[0].ncols()) as f64;
    let mut successes = DVector::zeros(n1);
    for frame in masks {
        if frame.nrows() != n1 || frame.ncols() != masks[0].ncols() {
            return Err(Error::Shape("mask frames differ in shape".into()));
        }
        for i in 0..n1 {
            successes[i] += frame.row(i).iter().sum::<f64>();
        }
    }
    Ok((successes, per_row))
}

/// Maximize the Bernoulli log-likelihood of the mask under the logistic model
/// by damped Newton steps on the `(1, X_i)` design.
///
/// The design can be rank-deficient (the covariates may already carry an
/// intercept column); a small diagonal jitter keeps the Newton solve defined,
/// and the fitted probabilities remain identified either way.
pub fn fit_logistic_missing(masks: &[DMatrix<f64>], cov: &Covariates) -> Result<MissingModel> {
    let (successes, per_row) = mask_counts(masks)?;
    let n1 = successes.len();
    if cov.n_rows() != n1 {
        return Err(Error::Shape("covariates do not match mask rows".into()));
    }
    let total: f64 = successes.iter().sum();
    if total == 0.0 || total == per_row * n1 as f64 {
        return Err(Error::SingularFit("mask needs at least one 0 and one 1".into()));
    }

    let p1 = cov.dim() + 1;
    let design = DMatrix::from_fn(n1, p1, |i, j| if j == 0 { 1.0 } else { cov.x()[(i, j - 1)] });

    let log_lik = |alpha: &DVector<f64>| -> f64 {
        let eta = &design * alpha;
        (0..n1)
            .map(|i| {
                let e = eta[i];
                // log(1 + exp(e)) evaluated stably
                let log1pe = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
                successes[i] * e - per_row * log1pe
            })
            .sum()
    };

    let mut alpha = DVector::zeros(p1);
    let mut converged = false;
    for _ in 0..100 {
        let eta = &design * &alpha;
        let mu: DVector<f64> = eta.map(logistic);
        let grad = design.transpose()
            * DVector::from_fn(n1, |i, _| successes[i] - per_row * mu[i]);
        if grad.amax() < 1e-8 {
            converged = true;
            break;
        }
        let mut hess: DMatrix<f64> = DMatrix::zeros(p1, p1);
        for i in 0..n1 {
            let w = per_row * mu[i] * (1.0 - mu[i]);
            let row = design.row(i);
            for a in 0..p1 {
                for b in 0..p1 {
                    hess[(a, b)] += w * row[a] * row[b];
                }
            }
        }
        let jitter = 1e-10 * hess.trace().max(1.0) / p1 as f64;
        for d in 0..p1 {
            hess[(d, d)] += jitter;
        }
        let step = hess
            .clone()
            .cholesky()
            .map(|c| c.solve(&grad))
            .or_else(|| hess.lu().solve(&grad))
            .ok_or_else(|| Error::SingularFit("Newton system is singular".into()))?;

        // halve the step until the likelihood does not decrease (up to
        // rounding noise on sums of this magnitude)
        let base = log_lik(&alpha);
        let slack = 1e-9 * (1.0 + base.abs());
        let mut scale = 1.0;
        let mut candidate = &alpha + &step * scale;
        while log_lik(&candidate) < base - slack && scale > 1e-12 {
            scale *= 0.5;
            candidate = &alpha + &step * scale;
        }
        if scale <= 1e-12 {
            break;
        }
        alpha = candidate;
        if alpha.amax() > 50.0 {
            return Err(Error::SingularFit(format!(
                "coefficients diverged (|alpha|_inf = {:.1}); mask looks separated",
                alpha.amax()
            )));
        }
    }
    if !converged {
        // Newton converges quadratically here; not reaching the gradient
        // tolerance in 100 iterations indicates a separated fit
        let eta = &design * &alpha;
        let mu: DVector<f64> = eta.map(logistic);
        let grad = design.transpose()
            * DVector::from_fn(n1, |i, _| successes[i] - per_row * mu[i]);
        if grad.amax() >= 1e-6 {
            return Err(Error::SingularFit("no convergence after 100 Newton iterations".into()));
        }
    }

    let probs = (&design * &alpha).map(logistic);
    Ok(MissingModel { alpha, probs, mechanism: Mechanism::Mar })
}

/// Use the grand mean of the mask as one common observation probability.
pub fn estimate_uniform_rate(masks: &[DMatrix<f64>]) -> Result<MissingModel> {
    let (successes, per_row) = mask_counts(masks)?;
    let n1 = successes.len();
    let rate = successes.sum() / (per_row * n1 as f64);
    let logit = if rate >= 1.0 {
        700.0
    } else if rate <= 0.0 {
        -700.0
    } else {
        (rate / (1.0 - rate)).ln()
    };
    let mut alpha = DVector::zeros(2);
    alpha[0] = logit;
    Ok(MissingModel {
        alpha,
        probs: DVector::from_element(n1, rate),
        mechanism: Mechanism::Uni,
    })
}

/// Inverse-probability weighted panel with its time-centered versions and
/// the per-entry correction products `Z²(p̂ - 1)`.
#[derive(Debug, Clone)]
pub struct WeightedPanel {
    /// `Z_t`, zero wherever the mask is zero.
    pub z: Vec<DMatrix<f64>>,
    /// `Z̄ = T⁻¹ Σ_t Z_t`.
    pub zbar: DMatrix<f64>,
    /// `Z̄_lag = (T-1)⁻¹ Σ_{t=2..T} Z_{t-1}` (zero matrix when T = 1).
    pub zbar_lag: DMatrix<f64>,
    /// `Z̃_t = Z_t − Z̄` for every frame.
    pub z_centered: Vec<DMatrix<f64>>,
    /// `Z̃_{t-1,lag} = Z_{t-1} − Z̄_lag` for the first T−1 frames.
    pub z_lag_centered: Vec<DMatrix<f64>>,
    /// `Z_t² (p̂_i − 1)` per frame; equals `Z(Y−Z)` on observed entries.
    pub correction: Vec<DMatrix<f64>>,
    /// The probabilities the weights were built from.
    pub probs: DVector<f64>,
}

/// Weight the panel by the fitted observation probabilities.
pub fn build_weighted_panel(panel: &PanelSeries, mm: &MissingModel) -> Result<WeightedPanel> {
    if mm.probs.len() != panel.n1() {
        return Err(Error::Shape("probability vector does not match panel rows".into()));
    }
    for (i, &p) in mm.probs.iter().enumerate() {
        if p < PROB_FLOOR {
            return Err(Error::IllPosedWeighting { row: i, prob: p, floor: PROB_FLOOR });
        }
    }
    let horizon = panel.horizon();
    let (n1, n2) = (panel.n1(), panel.n2());
    let mut z = Vec::with_capacity(horizon);
    let mut correction = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let mask = &panel.mask()[t];
        let y = &panel.responses()[t];
        let zt = DMatrix::from_fn(n1, n2, |i, j| mask[(i, j)] * y[(i, j)] / mm.probs[i]);
        let gt = DMatrix::from_fn(n1, n2, |i, j| zt[(i, j)] * zt[(i, j)] * (mm.probs[i] - 1.0));
        z.push(zt);
        correction.push(gt);
    }
    let mut zbar = DMatrix::zeros(n1, n2);
    for zt in &z {
        zbar += zt;
    }
    zbar /= horizon as f64;
    let mut zbar_lag = DMatrix::zeros(n1, n2);
    if horizon >= 2 {
        for zt in &z[..horizon - 1] {
            zbar_lag += zt;
        }
        zbar_lag /= (horizon - 1) as f64;
    }
    let z_centered = z.iter().map(|zt| zt - &zbar).collect();
    let z_lag_centered =
        if horizon >= 2 { z[..horizon - 1].iter().map(|zt| zt - &zbar_lag).collect() } else { Vec::new() };
    Ok(WeightedPanel {
        z,
        zbar,
        zbar_lag,
        z_centered,
        z_lag_centered,
        correction,
        probs: mm.probs.clone(),
    })
}

impl WeightedPanel {
    pub fn horizon(&self) -> usize {
        self.z.len()
    }

    pub fn n1(&self) -> usize {
        self.zbar.nrows()
    }

    pub fn n2(&self) -> usize {
        self.zbar.ncols()
    }
}

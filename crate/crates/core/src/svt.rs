//! Static singular-value-thresholding baselines. All three ignore the
//! network dynamics and reuse the regression-step closed forms on the
//! weighted responses directly: per time point (SEP), averaged over time
//! (AVG), or on the pooled time average (SUM).

use nalgebra::DMatrix;

use crate::error::Result;
use crate::missingness::WeightedPanel;
use crate::model::Covariates;
use crate::regression::{fit_beta, fit_intercept_b, Step2Config};

/// Covariate coefficients and intercept of one static fit.
#[derive(Debug, Clone)]
pub struct SvtFit {
    pub beta: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

fn svt_single(frame: &DMatrix<f64>, cov: &Covariates, cfg: &Step2Config) -> Result<SvtFit> {
    let frames = std::slice::from_ref(frame);
    let beta = fit_beta(frames, cov, cfg)?;
    let intercept = fit_intercept_b(frames, cov, cfg)?;
    Ok(SvtFit { beta, b: intercept.b_hat })
}

/// Fit each time point separately.
pub fn svt_sep(wp: &WeightedPanel, cov: &Covariates, cfg: &Step2Config) -> Result<Vec<SvtFit>> {
    wp.z.iter().map(|zt| svt_single(zt, cov, cfg)).collect()
}

/// Average the per-time fits.
pub fn svt_avg(wp: &WeightedPanel, cov: &Covariates, cfg: &Step2Config) -> Result<SvtFit> {
    let fits = svt_sep(wp, cov, cfg)?;
    let t = fits.len() as f64;
    let mut beta = DMatrix::zeros(fits[0].beta.nrows(), fits[0].beta.ncols());
    let mut b = DMatrix::zeros(fits[0].b.nrows(), fits[0].b.ncols());
    for fit in &fits {
        beta += &fit.beta;
        b += &fit.b;
    }
    Ok(SvtFit { beta: beta / t, b: b / t })
}

/// Minimize the pooled objective `T⁻¹ Σ_t ‖Z_t − Xβ − B‖_F² + penalties`,
/// which by its quadratic structure equals the closed forms applied to the
/// time average `Z̄`.
pub fn svt_sum(wp: &WeightedPanel, cov: &Covariates, cfg: &Step2Config) -> Result<SvtFit> {
    svt_single(&wp.zbar, cov, cfg)
}

/// Value of the pooled objective at a candidate (β, B).
pub fn pooled_objective(
    wp: &WeightedPanel,
    cov: &Covariates,
    cfg: &Step2Config,
    fit: &SvtFit,
) -> f64 {
    let surface = cov.x() * &fit.beta + &fit.b;
    let data: f64 = wp.z.iter().map(|zt| (zt - &surface).norm_squared()).sum::<f64>()
        / wp.horizon() as f64;
    let nuclear: f64 = fit.b.clone().svd(false, false).singular_values.iter().sum();
    data + cfg.nu3 * fit.beta.norm_squared()
        + cfg.nu4 * (cfg.mix_alpha * nuclear + (1.0 - cfg.mix_alpha) * fit.b.norm_squared())
}

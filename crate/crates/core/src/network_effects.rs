//! First estimation step: the ridge-penalized, missingness-corrected profile
//! objective for the network effects (λ, γ), minimized by exact blockwise
//! coordinate updates.
//!
//! With `Z̃_t` the centered weighted responses and `Z̃_{t-1,lag}` the centered
//! lags, the per-cell residual is
//!
//! ```text
//! Δ̃_ijt = Z̃_ijt − λ_i (W1 Z̃_{t-1,lag})_ij − (Z̃_{t-1,lag} W2)_ij γ_j,
//! ```
//!
//! and the objective adds correction terms built from `Z(Y−Z) = Z²(p̂−1)`
//! that remove the inflation the weighting leaves in squared residuals:
//!
//! ```text
//! Q(λ,γ) = Σ_ij [ Σ_t Δ̃²_ijt
//!                 + λ_i² (1−T⁻¹) Σ_t Σ_k W1²_ik Z(Y−Z)_kj(t-1)
//!                 + γ_j² (1−T⁻¹) Σ_t Σ_k W2²_kj Z(Y−Z)_ik(t-1)
//!                 + (1−T⁻¹) Σ_t Z(Y−Z)_ijt ]
//!          + ν1 ‖λ‖² + ν2 ‖γ‖².
//! ```
//!
//! Time sums pair response frames `t = 2..T` with lag frames `t-1`; the
//! objective is quadratic with a separable λ-block given γ (and vice versa),
//! so each block update is a closed-form exact minimizer.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::missingness::WeightedPanel;
use crate::model::NetworkPair;

/// Tuning for the blockwise fit.
#[derive(Debug, Clone)]
pub struct Step1Config {
    pub nu1: f64,
    pub nu2: f64,
    /// Sup-norm convergence tolerance on the parameter change per sweep.
    pub tol: f64,
    pub max_iter: usize,
    /// Block denominators at or below this floor abort the fit.
    pub denominator_floor: f64,
}

impl Default for Step1Config {
    fn default() -> Self {
        Self { nu1: 0.0, nu2: 0.0, tol: 1e-6, max_iter: 100, denominator_floor: 1e-10 }
    }
}

impl Step1Config {
    pub fn with_penalties(nu1: f64, nu2: f64) -> Self {
        Self { nu1, nu2, ..Self::default() }
    }
}

/// Result of the blockwise fit.
#[derive(Debug, Clone)]
pub struct Step1Fit {
    pub lambda_hat: DVector<f64>,
    pub gamma_hat: DVector<f64>,
    /// Correction scalars entering the λ-block denominators.
    pub kappa: DVector<f64>,
    /// Correction scalars entering the γ-block denominators.
    pub corr_gamma: DVector<f64>,
    /// Objective value at the start and after each full sweep.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Precomputed quadratic form of the profile objective.
///
/// The objective in (λ, γ) is
///
/// ```text
/// szz + offset − 2λᵀa − 2γᵀb + Σ λ_i²(su2_i+κ_i) + Σ γ_j²(sv2_j+ξ_j)
///   + 2 λᵀ C γ + ν1‖λ‖² + ν2‖γ‖²,
/// ```
///
/// which every routine in this module (objective values, block updates,
/// the Hessian) reads off directly.
#[derive(Debug, Clone)]
pub struct ProfileQuadratic {
    pub n1: usize,
    pub n2: usize,
    /// Panel horizon T (the time scaling uses T, not the T−1 summands).
    pub horizon: usize,
    su2: DVector<f64>,
    sv2: DVector<f64>,
    a: DVector<f64>,
    b: DVector<f64>,
    cross: DMatrix<f64>,
    kappa: DVector<f64>,
    corr_gamma: DVector<f64>,
    szz: f64,
    offset: f64,
}

impl ProfileQuadratic {
    pub fn new(wp: &WeightedPanel, nets: &NetworkPair) -> Result<Self> {
        let horizon = wp.horizon();
        if horizon < 2 {
            return Err(Error::Invalid("profile objective needs T >= 2 (lag undefined)".into()));
        }
        let (n1, n2) = (wp.n1(), wp.n2());
        if nets.n1() != n1 || nets.n2() != n2 {
            return Err(Error::Shape("networks do not match the weighted panel".into()));
        }
        let lags = horizon - 1;
        let mut su2 = DVector::zeros(n1);
        let mut sv2 = DVector::zeros(n2);
        let mut a = DVector::zeros(n1);
        let mut b = DVector::zeros(n2);
        let mut cross = DMatrix::zeros(n1, n2);
        let mut szz = 0.0;
        for tau in 0..lags {
            let u = nets.w1_dot(&wp.z_lag_centered[tau]);
            let v = nets.dot_w2(&wp.z_lag_centered[tau]);
            let resp = &wp.z_centered[tau + 1];
            for i in 0..n1 {
                for j in 0..n2 {
                    let (uij, vij, rij) = (u[(i, j)], v[(i, j)], resp[(i, j)]);
                    su2[i] += uij * uij;
                    sv2[j] += vij * vij;
                    a[i] += uij * rij;
                    b[j] += vij * rij;
                    cross[(i, j)] += uij * vij;
                }
            }
            szz += resp.iter().map(|&r| r * r).sum::<f64>();
        }

        let scale = 1.0 - 1.0 / horizon as f64;
        // row / column totals of the correction frames over the lag range
        let mut g_row = DVector::zeros(n1);
        let mut g_col = DVector::zeros(n2);
        for tau in 0..lags {
            let gt = &wp.correction[tau];
            for i in 0..n1 {
                for j in 0..n2 {
                    g_row[i] += gt[(i, j)];
                    g_col[j] += gt[(i, j)];
                }
            }
        }
        let kappa = nets.w1_sq_dot(&g_row) * scale;
        let corr_gamma = nets.w2_sq_t_dot(&g_col) * scale;
        // additive correction over the response frames
        let offset: f64 =
            scale * wp.correction[1..horizon].iter().map(|gt| gt.sum()).sum::<f64>();

        Ok(Self { n1, n2, horizon, su2, sv2, a, b, cross, kappa, corr_gamma, szz, offset })
    }

    pub fn kappa(&self) -> &DVector<f64> {
        &self.kappa
    }

    pub fn corr_gamma(&self) -> &DVector<f64> {
        &self.corr_gamma
    }

    /// λ-block denominators `su2_i + κ_i + ν1`.
    pub fn lambda_denominators(&self, cfg: &Step1Config) -> DVector<f64> {
        DVector::from_fn(self.n1, |i, _| self.su2[i] + self.kappa[i] + cfg.nu1)
    }

    /// γ-block denominators `sv2_j + ξ_j + ν2`.
    pub fn gamma_denominators(&self, cfg: &Step1Config) -> DVector<f64> {
        DVector::from_fn(self.n2, |j, _| self.sv2[j] + self.corr_gamma[j] + cfg.nu2)
    }

    /// Objective value at (λ, γ).
    pub fn objective(&self, lambda: &DVector<f64>, gamma: &DVector<f64>, cfg: &Step1Config) -> f64 {
        let mut val = self.szz + self.offset;
        val -= 2.0 * lambda.dot(&self.a);
        val -= 2.0 * gamma.dot(&self.b);
        for i in 0..self.n1 {
            val += lambda[i] * lambda[i] * (self.su2[i] + self.kappa[i] + cfg.nu1);
        }
        for j in 0..self.n2 {
            val += gamma[j] * gamma[j] * (self.sv2[j] + self.corr_gamma[j] + cfg.nu2);
        }
        val += 2.0 * (lambda.transpose() * &self.cross * gamma)[(0, 0)];
        val
    }
}

/// Evaluate the penalized profile objective at (λ, γ).
pub fn profile_objective(
    wp: &WeightedPanel,
    nets: &NetworkPair,
    lambda: &DVector<f64>,
    gamma: &DVector<f64>,
    cfg: &Step1Config,
) -> Result<f64> {
    let q = ProfileQuadratic::new(wp, nets)?;
    if lambda.len() != q.n1 || gamma.len() != q.n2 {
        return Err(Error::Shape("parameter lengths do not match the panel".into()));
    }
    Ok(q.objective(lambda, gamma, cfg))
}

fn check_denominators(
    denoms: &DVector<f64>,
    floor: f64,
    block: &'static str,
) -> Result<()> {
    for (idx, &d) in denoms.iter().enumerate() {
        if d <= floor {
            return Err(Error::IllConditionedBlock { block, index: idx, denominator: d });
        }
    }
    Ok(())
}

/// Exact minimizer of the objective over λ with γ held fixed.
pub fn update_lambda_block(
    q: &ProfileQuadratic,
    gamma: &DVector<f64>,
    cfg: &Step1Config,
) -> Result<DVector<f64>> {
    let denoms = q.lambda_denominators(cfg);
    check_denominators(&denoms, cfg.denominator_floor, "lambda")?;
    let cg = &q.cross * gamma;
    Ok(DVector::from_fn(q.n1, |i, _| (q.a[i] - cg[i]) / denoms[i]))
}

/// Exact minimizer of the objective over γ with λ held fixed.
pub fn update_gamma_block(
    q: &ProfileQuadratic,
    lambda: &DVector<f64>,
    cfg: &Step1Config,
) -> Result<DVector<f64>> {
    let denoms = q.gamma_denominators(cfg);
    check_denominators(&denoms, cfg.denominator_floor, "gamma")?;
    let cl = q.cross.transpose() * lambda;
    Ok(DVector::from_fn(q.n2, |j, _| (q.b[j] - cl[j]) / denoms[j]))
}

/// Alternate the two block updates from a zero start until the parameter
/// change falls below `cfg.tol` or `cfg.max_iter` sweeps elapse.
pub fn fit_with_quadratic(q: &ProfileQuadratic, cfg: &Step1Config) -> Result<Step1Fit> {
    let mut lambda = DVector::zeros(q.n1);
    let mut gamma = DVector::zeros(q.n2);
    let mut trace = vec![q.objective(&lambda, &gamma, cfg)];
    let mut converged = false;
    let mut iterations = 0;
    for sweep in 1..=cfg.max_iter {
        iterations = sweep;
        let new_lambda = update_lambda_block(q, &gamma, cfg)?;
        let new_gamma = update_gamma_block(q, &new_lambda, cfg)?;
        let change = (new_lambda.clone() - &lambda)
            .amax()
            .max((new_gamma.clone() - &gamma).amax());
        lambda = new_lambda;
        gamma = new_gamma;
        let value = q.objective(&lambda, &gamma, cfg);
        debug_assert!(
            value <= trace.last().unwrap() + 1e-9 * (1.0 + trace.last().unwrap().abs()),
            "objective increased across a sweep"
        );
        trace.push(value);
        if change < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(Step1Fit {
        lambda_hat: lambda,
        gamma_hat: gamma,
        kappa: q.kappa.clone(),
        corr_gamma: q.corr_gamma.clone(),
        objective_trace: trace,
        iterations,
        converged,
    })
}

/// Fit the network effects from a weighted panel.
pub fn fit_network_effects(
    wp: &WeightedPanel,
    nets: &NetworkPair,
    cfg: &Step1Config,
) -> Result<Step1Fit> {
    let q = ProfileQuadratic::new(wp, nets)?;
    fit_with_quadratic(&q, cfg)
}

/// The `(mT)⁻¹`-scaled Hessian of the profile objective in (λ, γ):
/// diagonal blocks carry the block denominators, the off-diagonal block the
/// per-cell cross sums, and λ–λ / γ–γ off-diagonals vanish by separability.
pub fn hessian_with_quadratic(q: &ProfileQuadratic, cfg: &Step1Config) -> DMatrix<f64> {
    let m = q.n1 + q.n2;
    let scale = 2.0 / (m as f64 * q.horizon as f64);
    let mut h = DMatrix::zeros(m, m);
    let ld = q.lambda_denominators(cfg);
    let gd = q.gamma_denominators(cfg);
    for i in 0..q.n1 {
        h[(i, i)] = scale * ld[i];
    }
    for j in 0..q.n2 {
        h[(q.n1 + j, q.n1 + j)] = scale * gd[j];
    }
    for i in 0..q.n1 {
        for j in 0..q.n2 {
            let v = scale * q.cross[(i, j)];
            h[(i, q.n1 + j)] = v;
            h[(q.n1 + j, i)] = v;
        }
    }
    h
}

/// Convenience wrapper building the quadratic form first.
pub fn profile_hessian(
    wp: &WeightedPanel,
    nets: &NetworkPair,
    cfg: &Step1Config,
) -> Result<DMatrix<f64>> {
    Ok(hessian_with_quadratic(&ProfileQuadratic::new(wp, nets)?, cfg))
}

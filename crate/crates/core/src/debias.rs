//! Multi-round bias reduction for the fitted network effects.
//!
//! The first-step estimator carries an O(1/T) bias driven by the weighting
//! noise. Its leading term is estimated by plugging the fitted probabilities
//! into
//!
//! ```text
//! b̂_i = (2/(mT)) λ̃_i Σ_j Σ_k W1²_ik · T⁻¹ Σ_t Ẑ²_kjt (p̂_k − 1)
//! ```
//!
//! (γ symmetric), solved against the scaled Hessian of the profile
//! objective, and subtracted. Later rounds reuse the same weighted sums with
//! the previous round's correction in place of the raw coefficient, scaled
//! by 1/(mT²) and applied with alternating sign.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::missingness::WeightedPanel;
use crate::model::NetworkPair;
use crate::network_effects::{hessian_with_quadratic, ProfileQuadratic, Step1Config, Step1Fit};

/// Outcome of one or more debiasing rounds.
#[derive(Debug, Clone)]
pub struct BiasState {
    /// Number of rounds applied.
    pub rounds: usize,
    /// Raw weighted sums `b̂^{(r)}` per round, before the Hessian solve.
    pub b_raw: Vec<DVector<f64>>,
    /// Applied corrections `b̂_r` per round.
    pub b_hat: Vec<DVector<f64>>,
    /// Sup norms of the applied corrections.
    pub sup_norms: Vec<f64>,
    /// Rounds (1-based) where the correction sup-norm failed to contract.
    pub contraction_violations: Vec<usize>,
    /// Debiased coefficients after the final round.
    pub lambda: DVector<f64>,
    pub gamma: DVector<f64>,
    /// Coefficients after each round.
    pub per_round: Vec<(DVector<f64>, DVector<f64>)>,
    /// Condition number of the scaled Hessian used in the solves.
    pub sigma2_condition: f64,
}

/// Paper-default round count: two rounds for short panels, one otherwise.
pub fn default_rounds(horizon: usize) -> usize {
    if horizon <= 30 {
        2
    } else {
        1
    }
}

const MAX_CONDITION: f64 = 1e12;

struct HessianSolver {
    factor: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    condition: f64,
}

impl HessianSolver {
    fn new(hess: &DMatrix<f64>) -> Result<Self> {
        let eigs = hess.clone().symmetric_eigen().eigenvalues;
        let max = eigs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let min = eigs.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        if !condition.is_finite() || condition > MAX_CONDITION {
            return Err(Error::Solve(format!(
                "scaled Hessian condition number {condition:.3e} exceeds {MAX_CONDITION:.0e}"
            )));
        }
        Ok(Self { factor: hess.clone().lu(), condition })
    }

    fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        self.factor
            .solve(rhs)
            .ok_or_else(|| Error::Solve("Hessian solve failed".into()))
    }
}

/// Per-node weighted sums `Σ_k W1²_ik s_k` and `Σ_k W2²_kj u_k`, where
/// `s_k` / `u_k` total the correction frames over all T times (averaged by
/// T) along rows / columns.
fn correction_profiles(wp: &WeightedPanel, nets: &NetworkPair) -> (DVector<f64>, DVector<f64>) {
    let (n1, n2) = (wp.n1(), wp.n2());
    let horizon = wp.horizon() as f64;
    let mut row_avg = DVector::zeros(n1);
    let mut col_avg = DVector::zeros(n2);
    for gt in &wp.correction {
        for i in 0..n1 {
            for j in 0..n2 {
                row_avg[i] += gt[(i, j)];
                col_avg[j] += gt[(i, j)];
            }
        }
    }
    row_avg /= horizon;
    col_avg /= horizon;
    (nets.w1_sq_dot(&row_avg), nets.w2_sq_t_dot(&col_avg))
}

/// Apply `rounds >= 1` debiasing rounds to a first-step fit.
pub fn debias_with_quadratic(
    fit: &Step1Fit,
    q: &ProfileQuadratic,
    wp: &WeightedPanel,
    nets: &NetworkPair,
    cfg: &Step1Config,
    rounds: usize,
) -> Result<BiasState> {
    if rounds == 0 {
        return Err(Error::Config("debiasing needs at least one round".into()));
    }
    let (n1, n2) = (q.n1, q.n2);
    let m = n1 + n2;
    let mt = (m * q.horizon) as f64;
    let solver = HessianSolver::new(&hessian_with_quadratic(q, cfg))?;
    let (lam_profile, gam_profile) = correction_profiles(wp, nets);

    // round 1: raw bias from the fitted coefficients, ridge term removed
    let mut raw = DVector::zeros(m);
    for i in 0..n1 {
        raw[i] = 2.0 / mt * fit.lambda_hat[i] * lam_profile[i];
    }
    for j in 0..n2 {
        raw[n1 + j] = 2.0 / mt * fit.gamma_hat[j] * gam_profile[j];
    }
    let mut ridge = DVector::zeros(m);
    for i in 0..n1 {
        ridge[i] = 2.0 * cfg.nu1 * fit.lambda_hat[i];
    }
    for j in 0..n2 {
        ridge[n1 + j] = 2.0 * cfg.nu2 * fit.gamma_hat[j];
    }
    let correction = solver.solve(&(raw.clone() - ridge / mt))?;

    let mut lambda = &fit.lambda_hat - correction.rows(0, n1).into_owned();
    let mut gamma = &fit.gamma_hat - correction.rows(n1, n2).into_owned();
    let mut state = BiasState {
        rounds: 1,
        b_raw: vec![raw],
        sup_norms: vec![correction.amax()],
        b_hat: vec![correction],
        contraction_violations: Vec::new(),
        lambda: lambda.clone(),
        gamma: gamma.clone(),
        per_round: vec![(lambda.clone(), gamma.clone())],
        sigma2_condition: solver.condition,
    };

    for round in 2..=rounds {
        let prev = state.b_hat.last().unwrap();
        let mut raw = DVector::zeros(m);
        for i in 0..n1 {
            raw[i] = prev[i] * lam_profile[i] / mt;
        }
        for j in 0..n2 {
            raw[n1 + j] = prev[n1 + j] * gam_profile[j] / mt;
        }
        let sign = if round % 2 == 0 { -1.0 } else { 1.0 };
        let correction = solver.solve(&raw)? * sign;
        lambda -= correction.rows(0, n1).into_owned();
        gamma -= correction.rows(n1, n2).into_owned();
        let sup = correction.amax();
        if sup > *state.sup_norms.last().unwrap() {
            state.contraction_violations.push(round);
        }
        state.rounds = round;
        state.b_raw.push(raw);
        state.b_hat.push(correction);
        state.sup_norms.push(sup);
        state.lambda = lambda.clone();
        state.gamma = gamma.clone();
        state.per_round.push((lambda.clone(), gamma.clone()));
    }
    Ok(state)
}

/// One debiasing round.
pub fn estimate_bias_round1(
    fit: &Step1Fit,
    wp: &WeightedPanel,
    nets: &NetworkPair,
    cfg: &Step1Config,
) -> Result<BiasState> {
    debias_rounds(fit, wp, nets, cfg, 1)
}

/// Convenience wrapper rebuilding the quadratic form.
pub fn debias_rounds(
    fit: &Step1Fit,
    wp: &WeightedPanel,
    nets: &NetworkPair,
    cfg: &Step1Config,
    rounds: usize,
) -> Result<BiasState> {
    let q = ProfileQuadratic::new(wp, nets)?;
    debias_with_quadratic(fit, &q, wp, nets, cfg, rounds)
}

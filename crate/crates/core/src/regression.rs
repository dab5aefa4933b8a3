//! Second estimation step: with the network effects fixed, form residual
//! matrices and estimate the covariate coefficients by ridge and the
//! intercept by projected nuclear-norm soft-thresholding.
//!
//! ```text
//! Ẽ_t = Z_t − Λ̂ W1 Z_{t-1} − Z_{t-1} W2 Γ̂                (t = 2..T)
//! β̂  = (XᵀX + ν3 I)⁻¹ Xᵀ Ē                               Ē = (T−1)⁻¹ Σ Ẽ_t
//! B̂  = τ_{αν4/2}(P⊥_X Ē) / (1 + (1−α) ν4)
//! ```
//!
//! `τ_c` shrinks singular values by `c` and clips at zero: the proximal
//! operator of the nuclear norm.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::missingness::WeightedPanel;
use crate::model::{Covariates, NetworkPair};

/// Penalties for the regression step.
#[derive(Debug, Clone)]
pub struct Step2Config {
    /// Ridge penalty on β.
    pub nu3: f64,
    /// Overall penalty scale on the intercept.
    pub nu4: f64,
    /// Balance between nuclear (1.0) and Frobenius (0.0) shrinkage on B.
    pub mix_alpha: f64,
}

impl Default for Step2Config {
    fn default() -> Self {
        Self { nu3: 0.0, nu4: 0.0, mix_alpha: 1.0 }
    }
}

impl Step2Config {
    pub fn new(nu3: f64, nu4: f64, mix_alpha: f64) -> Result<Self> {
        if nu3 < 0.0 || nu4 < 0.0 || !(0.0..=1.0).contains(&mix_alpha) {
            return Err(Error::Config(
                "need nu3 >= 0, nu4 >= 0 and mix_alpha in [0,1]".into(),
            ));
        }
        Ok(Self { nu3, nu4, mix_alpha })
    }
}

/// Fitted regression coefficients and intercept.
#[derive(Debug, Clone)]
pub struct Step2Fit {
    pub beta_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    /// Singular values surviving the threshold.
    pub b_rank_hat: usize,
    /// Singular values of the projected residual mean, descending.
    pub singular_values: Vec<f64>,
    /// Time-averaged residual Ē.
    pub residual_mean: DMatrix<f64>,
}

/// Residual matrices `Ẽ_t` for t = 2..T (T−1 frames), built from the raw
/// weighted responses.
pub fn residual_panel(
    wp: &WeightedPanel,
    nets: &NetworkPair,
    lambda: &DVector<f64>,
    gamma: &DVector<f64>,
) -> Result<Vec<DMatrix<f64>>> {
    let horizon = wp.horizon();
    if horizon < 2 {
        return Err(Error::Invalid("residuals need T >= 2".into()));
    }
    let (n1, n2) = (wp.n1(), wp.n2());
    if lambda.len() != n1 || gamma.len() != n2 || nets.n1() != n1 || nets.n2() != n2 {
        return Err(Error::Shape("coefficient/network dimensions do not match the panel".into()));
    }
    let mut out = Vec::with_capacity(horizon - 1);
    for t in 1..horizon {
        let mut row_term = nets.w1_dot(&wp.z[t - 1]);
        for i in 0..n1 {
            let l = lambda[i];
            for j in 0..n2 {
                row_term[(i, j)] *= l;
            }
        }
        let mut col_term = nets.dot_w2(&wp.z[t - 1]);
        for j in 0..n2 {
            let g = gamma[j];
            for i in 0..n1 {
                col_term[(i, j)] *= g;
            }
        }
        out.push(&wp.z[t] - row_term - col_term);
    }
    Ok(out)
}

fn residual_mean(residuals: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    if residuals.is_empty() {
        return Err(Error::Invalid("no residual frames".into()));
    }
    let mut mean = DMatrix::zeros(residuals[0].nrows(), residuals[0].ncols());
    for e in residuals {
        mean += e;
    }
    Ok(mean / residuals.len() as f64)
}

/// Ridge estimate of β from the time-averaged residual.
pub fn fit_beta(
    residuals: &[DMatrix<f64>],
    cov: &Covariates,
    cfg: &Step2Config,
) -> Result<DMatrix<f64>> {
    let mean = residual_mean(residuals)?;
    if mean.nrows() != cov.n_rows() {
        return Err(Error::Shape("residual rows do not match covariates".into()));
    }
    let p = cov.dim();
    let normal = cov.x().transpose() * cov.x() + DMatrix::identity(p, p) * cfg.nu3;
    let rhs = cov.x().transpose() * mean;
    normal
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .or_else(|| normal.lu().solve(&rhs))
        .ok_or_else(|| Error::Solve("XᵀX + nu3·I is singular".into()))
}

/// Shrink the singular values of a matrix by `c` and clip at zero.
pub fn soft_threshold_svd(mat: &DMatrix<f64>, c: f64) -> Result<DMatrix<f64>> {
    if c < 0.0 {
        return Err(Error::Config("threshold must be nonnegative".into()));
    }
    let svd = mat.clone().svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Solve("SVD did not produce U".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::Solve("SVD did not produce Vᵀ".into()))?;
    let shrunk = DVector::from_fn(svd.singular_values.len(), |k, _| {
        (svd.singular_values[k] - c).max(0.0)
    });
    let mut scaled = u;
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col *= shrunk[k];
    }
    Ok(scaled * v_t)
}

/// Fitted intercept with its rank and spectrum.
#[derive(Debug, Clone)]
pub struct InterceptFit {
    pub b_hat: DMatrix<f64>,
    pub rank: usize,
    pub singular_values: Vec<f64>,
    pub residual_mean: DMatrix<f64>,
}

/// Estimate the intercept by projecting the residual mean off the covariate
/// column space, soft-thresholding its singular values, and rescaling.
pub fn fit_intercept_b(
    residuals: &[DMatrix<f64>],
    cov: &Covariates,
    cfg: &Step2Config,
) -> Result<InterceptFit> {
    let mean = residual_mean(residuals)?;
    if mean.nrows() != cov.n_rows() {
        return Err(Error::Shape("residual rows do not match covariates".into()));
    }
    let projected = cov.complement_projector()? * &mean;
    let threshold = cfg.mix_alpha * cfg.nu4 / 2.0;
    let svd = projected.clone().svd(false, false);
    let mut singular_values: Vec<f64> = svd.singular_values.iter().copied().collect();
    singular_values.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let rank = singular_values.iter().filter(|&&s| s > threshold).count();
    let b_hat = soft_threshold_svd(&projected, threshold)? / (1.0 + (1.0 - cfg.mix_alpha) * cfg.nu4);
    Ok(InterceptFit { b_hat, rank, singular_values, residual_mean: mean })
}

/// Run the full regression step for fixed network effects.
pub fn fit_regression(
    wp: &WeightedPanel,
    nets: &NetworkPair,
    cov: &Covariates,
    lambda: &DVector<f64>,
    gamma: &DVector<f64>,
    cfg: &Step2Config,
) -> Result<Step2Fit> {
    let residuals = residual_panel(wp, nets, lambda, gamma)?;
    let beta_hat = fit_beta(&residuals, cov, cfg)?;
    let intercept = fit_intercept_b(&residuals, cov, cfg)?;
    Ok(Step2Fit {
        beta_hat,
        b_hat: intercept.b_hat,
        b_rank_hat: intercept.rank,
        singular_values: intercept.singular_values,
        residual_mean: intercept.residual_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::missingness::{build_weighted_panel, estimate_uniform_rate, MissingModel};
    use crate::model::{NetworkPair, PanelSeries};
    use crate::simulate::{self, Mechanism, SimConfig};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn uni_world(
        n: usize,
        horizon: usize,
        seed: u64,
        uni_prob: f64,
        noise: f64,
    ) -> (crate::simulate::SimWorld, WeightedPanel) {
        let mut cfg = SimConfig::new(n, n, horizon, seed);
        cfg.b_rank = 2;
        cfg.p_dim = 3;
        cfg.burn_in = 60;
        cfg.noise_sd = noise;
        cfg.mechanism = Mechanism::Uni;
        cfg.uni_prob = uni_prob;
        let world = simulate::simulate_world(&cfg).unwrap();
        let mm = estimate_uniform_rate(world.output.panel.mask()).unwrap();
        let wp = build_weighted_panel(&world.output.panel, &mm).unwrap();
        (world, wp)
    }

    #[test]
    fn zero_effects_leave_raw_responses() {
        let (world, wp) = uni_world(5, 6, 1, 0.7, 1.0);
        let res = residual_panel(
            &wp,
            &world.nets,
            &DVector::zeros(5),
            &DVector::zeros(5),
        )
        .unwrap();
        assert_eq!(res.len(), 5);
        for t in 1..6 {
            assert_relative_eq!((res[t - 1].clone() - &wp.z[t]).amax(), 0.0);
        }
    }

    #[test]
    fn residuals_recover_regression_surface_without_noise() {
        let (world, wp) = uni_world(6, 8, 2, 1.0, 0.0);
        let res = residual_panel(&wp, &world.nets, &world.params.lambda, &world.params.gamma)
            .unwrap();
        let surface = world.cov.x() * &world.params.beta + &world.params.intercept_b;
        for e in &res {
            assert!((e - &surface).amax() < 1e-8);
        }
    }

    #[test]
    fn two_by_two_hand_case() {
        let z0 = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let z1 = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 5.0]);
        let panel = PanelSeries::new(
            vec![z0.clone(), z1.clone()],
            vec![DMatrix::from_element(2, 2, 1.0); 2],
        )
        .unwrap();
        let mm = MissingModel {
            alpha: DVector::zeros(1),
            probs: DVector::from_element(2, 1.0),
            mechanism: Mechanism::Uni,
        };
        let wp = build_weighted_panel(&panel, &mm).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[0., 1., 1., 0.]);
        let nets = NetworkPair::normalize_networks(a.clone(), a).unwrap();
        let lambda = DVector::from_vec(vec![0.5, 0.25]);
        let gamma = DVector::from_vec(vec![0.1, 0.2]);
        let res = residual_panel(&wp, &nets, &lambda, &gamma).unwrap();
        // W1 swaps rows, W2 swaps columns
        let expected = DMatrix::from_row_slice(
            2,
            2,
            &[
                2.0 - 0.5 * 3.0 - 0.1 * 2.0,
                0.0 - 0.5 * 4.0 - 0.2 * 1.0,
                1.0 - 0.25 * 1.0 - 0.1 * 4.0,
                5.0 - 0.25 * 2.0 - 0.2 * 3.0,
            ],
        );
        assert_relative_eq!((res[0].clone() - expected).amax(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn ridge_limit_kills_beta() {
        let (world, wp) = uni_world(5, 6, 3, 0.8, 1.0);
        let res = residual_panel(&wp, &world.nets, &world.params.lambda, &world.params.gamma)
            .unwrap();
        let cfg = Step2Config::new(1e14, 0.0, 1.0).unwrap();
        let beta = fit_beta(&res, &world.cov, &cfg).unwrap();
        assert!(beta.amax() < 1e-8);
    }

    #[test]
    fn orthonormal_design_is_reproduced_exactly() {
        // X with orthonormal columns; Ē = X β* reproduces β* at nu3 = 0
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let raw = DMatrix::from_fn(8, 3, |_, _| rng.random::<f64>() - 0.5);
        let qr = raw.qr();
        let x = qr.q();
        let cov = Covariates::new(x.clone()).unwrap();
        let beta_star = DMatrix::from_fn(3, 6, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let target = &x * &beta_star;
        let cfg = Step2Config::default();
        let beta = fit_beta(&[target], &cov, &cfg).unwrap();
        assert_relative_eq!((beta - beta_star).amax(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn soft_threshold_identity_and_diagonal() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let m = DMatrix::from_fn(5, 4, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let same = soft_threshold_svd(&m, 0.0).unwrap();
        assert!((same - &m).amax() < 1e-10);

        let d = DMatrix::from_partial_diagonal(2, 2, &[3.0, 1.0]);
        let out = soft_threshold_svd(&d, 2.0).unwrap();
        let expected = DMatrix::from_partial_diagonal(2, 2, &[1.0, 0.0]);
        assert_relative_eq!((out - expected).amax(), 0.0, epsilon = 1e-12);
    }

    /// Projected-subgradient minimizer of ‖M − B‖_F² + 2c‖B‖_*, the prox
    /// problem solved in closed form by `soft_threshold_svd`.
    fn prox_subgradient_oracle(m: &DMatrix<f64>, c: f64, iters: usize) -> DMatrix<f64> {
        let objective = |b: &DMatrix<f64>| -> f64 {
            let svd = b.clone().svd(false, false);
            (m - b).norm_squared() + 2.0 * c * svd.singular_values.iter().sum::<f64>()
        };
        let mut b = m.clone();
        let mut best = b.clone();
        let mut best_val = objective(&b);
        for k in 0..iters {
            let svd = b.clone().svd(true, true);
            let u = svd.u.unwrap();
            let v_t = svd.v_t.unwrap();
            // subgradient of the nuclear norm: U_r V_rᵀ on the positive part
            let mut sub = DMatrix::zeros(m.nrows(), m.ncols());
            for r in 0..svd.singular_values.len() {
                if svd.singular_values[r] > 1e-12 {
                    for i in 0..m.nrows() {
                        for j in 0..m.ncols() {
                            sub[(i, j)] += u[(i, r)] * v_t[(r, j)];
                        }
                    }
                }
            }
            let grad = (b.clone() - m) * 2.0 + sub * (2.0 * c);
            b -= grad * (0.75 / (k as f64 + 2.0));
            // subgradient iterates are not monotone; keep the best one seen
            let val = objective(&b);
            if val < best_val {
                best_val = val;
                best = b.clone();
            }
        }
        best
    }

    #[test]
    fn soft_threshold_matches_prox_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for _ in 0..3 {
            let m = DMatrix::from_fn(5, 4, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let closed = soft_threshold_svd(&m, 0.5).unwrap();
            let iterative = prox_subgradient_oracle(&m, 0.5, 10_000);
            assert!(
                (closed - iterative).norm() < 1e-4,
                "prox mismatch beyond tolerance"
            );
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn soft_threshold_is_non_expansive(seed in 0u64..1000, c in 0.0f64..2.0) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let a = DMatrix::from_fn(4, 3, |_, _| rng.random::<f64>() * 4.0 - 2.0);
            let b = DMatrix::from_fn(4, 3, |_, _| rng.random::<f64>() * 4.0 - 2.0);
            let ta = soft_threshold_svd(&a, c).unwrap();
            let tb = soft_threshold_svd(&b, c).unwrap();
            proptest::prop_assert!((ta - tb).norm() <= (a - b).norm() + 1e-9);
        }
    }

    #[test]
    fn intercept_limits() {
        let (world, wp) = uni_world(6, 10, 8, 0.8, 1.0);
        let res = residual_panel(&wp, &world.nets, &world.params.lambda, &world.params.gamma)
            .unwrap();
        // nu4 = 0: the projected mean comes back unshrunk
        let cfg0 = Step2Config::default();
        let fit0 = fit_intercept_b(&res, &world.cov, &cfg0).unwrap();
        let projected = world.cov.complement_projector().unwrap() * fit0.residual_mean;
        assert!((fit0.b_hat.clone() - &projected).amax() < 1e-9);

        // mix_alpha = 0: pure Frobenius shrinkage by 1/(1+nu4)
        let cfg_f = Step2Config::new(0.0, 3.0, 0.0).unwrap();
        let fit_f = fit_intercept_b(&res, &world.cov, &cfg_f).unwrap();
        assert!((fit_f.b_hat * 4.0 - projected).amax() < 1e-9);
    }

    #[test]
    fn identification_holds_for_every_fit() {
        let (world, wp) = uni_world(7, 9, 9, 0.6, 1.0);
        for nu4 in [0.0, 1.0, 10.0] {
            let cfg = Step2Config::new(1.0, nu4, 0.9).unwrap();
            let fit = fit_regression(
                &wp,
                &world.nets,
                &world.cov,
                &world.params.lambda,
                &world.params.gamma,
                &cfg,
            )
            .unwrap();
            let xtb = world.cov.x().transpose() * &fit.b_hat;
            assert!(xtb.amax() < 1e-8, "X'B = {} at nu4 = {nu4}", xtb.amax());
        }
    }

    #[test]
    fn fitted_intercept_is_a_local_minimum_of_the_penalized_objective() {
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let target = DMatrix::from_fn(5, 4, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let (nu4, alpha) = (0.8, 0.7);
        let objective = |b: &DMatrix<f64>| {
            let fit = (&target - b).norm_squared();
            let svd = b.clone().svd(false, false);
            let nuclear: f64 = svd.singular_values.iter().sum();
            fit + nu4 * (alpha * nuclear + (1.0 - alpha) * b.norm_squared())
        };
        let b_hat =
            soft_threshold_svd(&target, alpha * nu4 / 2.0).unwrap() / (1.0 + (1.0 - alpha) * nu4);
        let base = objective(&b_hat);
        for _ in 0..1000 {
            let delta = DMatrix::from_fn(5, 4, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let delta = delta.clone() * (0.1 * rng.random::<f64>() / delta.norm());
            assert!(objective(&(b_hat.clone() + delta)) >= base - 1e-12);
        }
    }

    #[test]
    fn stronger_thresholds_never_raise_the_rank() {
        let (world, wp) = uni_world(6, 8, 12, 0.7, 1.0);
        let res = residual_panel(&wp, &world.nets, &world.params.lambda, &world.params.gamma)
            .unwrap();
        let mut last_rank = usize::MAX;
        for nu4 in [0.0, 0.5, 1.0, 2.0, 5.0, 20.0] {
            let cfg = Step2Config::new(0.0, nu4, 1.0).unwrap();
            let fit = fit_intercept_b(&res, &world.cov, &cfg).unwrap();
            assert!(fit.rank <= last_rank);
            last_rank = fit.rank;
        }
    }
}

//! Evaluation: rolling matrix recovery, masked-entry test error, RMSE
//! summaries, and cross-validated tuning.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::debias::{debias_with_quadratic, default_rounds};
use crate::error::{Error, Result};
use crate::missingness::{build_weighted_panel, estimate_uniform_rate, fit_logistic_missing, WeightedPanel};
use crate::model::{conditional_mean, Covariates, ModelParams, NetworkPair, PanelSeries};
use crate::network_effects::{fit_with_quadratic, ProfileQuadratic, Step1Config};
use crate::regression::{fit_regression, Step2Config};
use crate::simulate::Mechanism;

/// Recursive one-step-ahead reconstruction of the conditional-mean matrices.
///
/// Starts the recursion at `Z_0 := Z_1`, so the first frame is built from
/// the weighted data and every later frame from the previous reconstruction.
pub fn rolling_recover(
    params: &ModelParams,
    wp: &WeightedPanel,
    nets: &NetworkPair,
    cov: &Covariates,
) -> Result<Vec<DMatrix<f64>>> {
    let mut out = Vec::with_capacity(wp.horizon());
    let mut prev = wp.z[0].clone();
    for _ in 0..wp.horizon() {
        let a_t = conditional_mean(&prev, params, nets, cov)?;
        prev = a_t.clone();
        out.push(a_t);
    }
    Ok(out)
}

/// Relative squared error of a reconstruction on unobserved entries only:
/// `Σ {(1−R)(Â−Y)}² / Σ {(1−R) Y}²` against the complete responses.
pub fn test_error(
    a_hat: &[DMatrix<f64>],
    truth: &[DMatrix<f64>],
    mask: &[DMatrix<f64>],
) -> Result<f64> {
    if a_hat.len() != truth.len() || a_hat.len() != mask.len() {
        return Err(Error::Shape("frame counts differ".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    let mut hidden = 0usize;
    for t in 0..a_hat.len() {
        for i in 0..truth[t].nrows() {
            for j in 0..truth[t].ncols() {
                if mask[t][(i, j)] == 0.0 {
                    hidden += 1;
                    let d = a_hat[t][(i, j)] - truth[t][(i, j)];
                    num += d * d;
                    den += truth[t][(i, j)] * truth[t][(i, j)];
                }
            }
        }
    }
    if hidden == 0 {
        return Err(Error::Invalid("no masked entries to score".into()));
    }
    if den == 0.0 {
        return Err(Error::Invalid("masked truth entries are all zero".into()));
    }
    Ok(num / den)
}

/// Mean squared error between two coefficient vectors.
pub fn mse_vec(estimate: &DVector<f64>, truth: &DVector<f64>) -> f64 {
    (estimate - truth).norm_squared() / truth.len() as f64
}

/// Mean squared error between two matrices.
pub fn mse_mat(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> f64 {
    (estimate - truth).norm_squared() / (truth.nrows() * truth.ncols()) as f64
}

/// Mean squared error across a sequence of matrices.
pub fn mse_frames(estimate: &[DMatrix<f64>], truth: &[DMatrix<f64>]) -> f64 {
    let total: f64 = estimate.iter().zip(truth).map(|(a, b)| (a - b).norm_squared()).sum();
    let cells = truth.len() * truth[0].nrows() * truth[0].ncols();
    total / cells as f64
}

/// One grid point of the tuning search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuningPoint {
    pub nu1: f64,
    pub nu2: f64,
    pub nu3: f64,
    pub nu4: f64,
    pub mix_alpha: f64,
}

impl TuningPoint {
    fn penalty_sum(&self) -> f64 {
        self.nu1 + self.nu2 + self.nu3 + self.nu4
    }
}

/// Cross-validation plan: entry-wise folds over the observed index set by
/// default, contiguous time blocks behind the `time_blocked` flag.
#[derive(Debug, Clone)]
pub struct CvPlan {
    pub folds: usize,
    pub grid: Vec<TuningPoint>,
    pub time_blocked: bool,
    pub seed: u64,
    /// Debias rounds applied inside each fold fit; `None` uses the
    /// horizon-based policy.
    pub debias_rounds: Option<usize>,
}

impl CvPlan {
    pub fn new(grid: Vec<TuningPoint>, seed: u64) -> Self {
        Self { folds: 5, grid, time_blocked: false, seed, debias_rounds: None }
    }

    /// Default grid: tied ridge penalties, three β penalties, five log-spaced
    /// intercept penalties, three shrinkage balances.
    pub fn default_grid(seed: u64) -> Self {
        let mut grid = Vec::new();
        for &nu12 in &[0.1, 1.0, 10.0] {
            for &nu3 in &[0.1, 1.0, 10.0] {
                for k in 0..5 {
                    let nu4 = 10f64.powf(-2.0 + k as f64);
                    for &mix_alpha in &[0.5, 0.8, 1.0] {
                        grid.push(TuningPoint { nu1: nu12, nu2: nu12, nu3, nu4, mix_alpha });
                    }
                }
            }
        }
        Self::new(grid, seed)
    }
}

/// Chosen tuning plus the per-point mean scores.
#[derive(Debug, Clone)]
pub struct CvChoice {
    pub point: TuningPoint,
    pub scores: Vec<(TuningPoint, f64)>,
}

fn fold_assignment(panel: &PanelSeries, plan: &CvPlan) -> Result<Vec<Vec<(usize, usize, usize)>>> {
    let mut observed = Vec::new();
    for t in 0..panel.horizon() {
        for i in 0..panel.n1() {
            for j in 0..panel.n2() {
                if panel.mask()[t][(i, j)] == 1.0 {
                    observed.push((t, i, j));
                }
            }
        }
    }
    if plan.folds < 2 {
        return Err(Error::Config("cross-validation needs at least 2 folds".into()));
    }
    if observed.len() < plan.folds * 50 {
        return Err(Error::Invalid(format!(
            "too few observed entries for {}-fold validation: {}",
            plan.folds,
            observed.len()
        )));
    }
    let mut folds = vec![Vec::new(); plan.folds];
    if plan.time_blocked {
        let horizon = panel.horizon();
        for entry in observed {
            let fold = (entry.0 * plan.folds) / horizon;
            folds[fold.min(plan.folds - 1)].push(entry);
        }
    } else {
        let mut rng = ChaCha20Rng::seed_from_u64(plan.seed);
        observed.shuffle(&mut rng);
        for (idx, entry) in observed.into_iter().enumerate() {
            folds[idx % plan.folds].push(entry);
        }
    }
    Ok(folds)
}

/// Output of one full two-step fit plus reconstruction.
#[derive(Debug, Clone)]
pub struct RecoveredFit {
    pub org: ModelParams,
    pub adj: ModelParams,
    pub a_org: Vec<DMatrix<f64>>,
    pub a_adj: Vec<DMatrix<f64>>,
}

/// Fit the full two-step pipeline once and reconstruct the panel.
pub fn fit_and_recover(
    panel: &PanelSeries,
    nets: &NetworkPair,
    cov: &Covariates,
    mechanism: Mechanism,
    step1: &Step1Config,
    step2: &Step2Config,
    rounds: Option<usize>,
) -> Result<RecoveredFit> {
    let mm = match mechanism {
        Mechanism::Mar => fit_logistic_missing(panel.mask(), cov)?,
        Mechanism::Uni => estimate_uniform_rate(panel.mask())?,
    };
    let wp = build_weighted_panel(panel, &mm)?;
    let q = ProfileQuadratic::new(&wp, nets)?;
    let fit = fit_with_quadratic(&q, step1)?;
    let rounds = rounds.unwrap_or_else(|| default_rounds(panel.horizon()));
    let bias = debias_with_quadratic(&fit, &q, &wp, nets, step1, rounds)?;

    let reg_org = fit_regression(&wp, nets, cov, &fit.lambda_hat, &fit.gamma_hat, step2)?;
    let reg_adj = fit_regression(&wp, nets, cov, &bias.lambda, &bias.gamma, step2)?;
    let org = ModelParams::new(
        fit.lambda_hat.clone(),
        fit.gamma_hat.clone(),
        reg_org.beta_hat.clone(),
        reg_org.b_hat.clone(),
        reg_org.b_rank_hat,
    )?;
    let adj = ModelParams::new(
        bias.lambda.clone(),
        bias.gamma.clone(),
        reg_adj.beta_hat.clone(),
        reg_adj.b_hat.clone(),
        reg_adj.b_rank_hat,
    )?;
    let a_org = rolling_recover(&org, &wp, nets, cov)?;
    let a_adj = rolling_recover(&adj, &wp, nets, cov)?;
    Ok(RecoveredFit { org, adj, a_org, a_adj })
}

/// Entry-holdout cross-validation of the tuning grid.
///
/// For each grid point and fold, the fold's observed entries are masked in
/// addition, the full two-step fit runs on the rest, and the held-out
/// entries are scored by the RMSE of the rolling reconstruction. Points
/// whose fit fails on some fold score infinity. Ties break toward larger
/// penalties.
pub fn cross_validate(
    panel: &PanelSeries,
    nets: &NetworkPair,
    cov: &Covariates,
    mechanism: Mechanism,
    plan: &CvPlan,
) -> Result<CvChoice> {
    if plan.grid.is_empty() {
        return Err(Error::Config("empty tuning grid".into()));
    }
    let folds = fold_assignment(panel, plan)?;

    // held-out truth values come from the panel itself (they were observed)
    let mut scores = Vec::with_capacity(plan.grid.len());
    for point in &plan.grid {
        let step1 = Step1Config::with_penalties(point.nu1, point.nu2);
        let step2 = Step2Config::new(point.nu3, point.nu4, point.mix_alpha)?;
        let mut total = 0.0;
        let mut count = 0usize;
        let mut failed = false;
        for fold in &folds {
            let mut mask: Vec<DMatrix<f64>> = panel.mask().to_vec();
            for &(t, i, j) in fold {
                mask[t][(i, j)] = 0.0;
            }
            let train = PanelSeries::new(panel.responses().to_vec(), mask)?;
            match fit_and_recover(&train, nets, cov, mechanism, &step1, &step2, plan.debias_rounds)
            {
                Ok(rec) => {
                    for &(t, i, j) in fold {
                        let d = rec.a_adj[t][(i, j)] - panel.observed(t, i, j).unwrap();
                        total += d * d;
                        count += 1;
                    }
                }
                Err(_) => {
                    failed = true;
                    break;
                }
            }
        }
        let score = if failed { f64::INFINITY } else { (total / count as f64).sqrt() };
        scores.push((*point, score));
    }
    let best = scores
        .iter()
        .cloned()
        .min_by(|(pa, sa), (pb, sb)| {
            sa.partial_cmp(sb)
                .unwrap()
                .then(pb.penalty_sum().partial_cmp(&pa.penalty_sum()).unwrap())
        })
        .unwrap();
    if best.1.is_infinite() {
        return Err(Error::Invalid("every grid point failed to fit".into()));
    }
    Ok(CvChoice { point: best.0, scores })
}

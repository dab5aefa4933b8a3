//! Synthetic data generation: power-law networks, model parameters, and
//! panels with covariate-dependent or uniform missingness.
//!
//! All draws flow through a single seeded generator in a fixed order
//! (row network, column network, covariates, coefficients, burn-in noise,
//! kept noise, mask), so a `SimConfig` plus seed reproduces a panel
//! bit for bit.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{
    check_stationarity, conditional_mean, Covariates, ModelParams, NetworkPair, PanelSeries,
};

/// Missingness mechanism for mask generation and probability estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mechanism {
    /// Logistic observation probabilities driven by row covariates.
    Mar,
    /// One common observation probability for every entry.
    Uni,
}

impl std::fmt::Display for Mechanism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mechanism::Mar => write!(f, "MAR"),
            Mechanism::Uni => write!(f, "UNI"),
        }
    }
}

/// Full description of a synthetic experiment.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n1: usize,
    pub n2: usize,
    pub horizon: usize,
    pub powerlaw_exponent: f64,
    /// Covariate dimension including the leading intercept column.
    pub p_dim: usize,
    /// Fraction of beta entries forced to exactly zero.
    pub beta_sparsity: f64,
    pub beta_range: (f64, f64),
    pub b_rank: usize,
    /// Standard deviation of the low-rank factor entries.
    pub b_scale: f64,
    pub lambda_val: f64,
    pub gamma_val: f64,
    pub noise_sd: f64,
    pub mechanism: Mechanism,
    pub alpha0: f64,
    pub alpha_slope: f64,
    pub uni_prob: f64,
    pub seed: u64,
    pub burn_in: usize,
}

impl SimConfig {
    pub fn new(n1: usize, n2: usize, horizon: usize, seed: u64) -> Self {
        Self {
            n1,
            n2,
            horizon,
            powerlaw_exponent: 2.5,
            p_dim: 6,
            beta_sparsity: 0.95,
            beta_range: (-0.01, 0.01),
            b_rank: 10,
            b_scale: 0.5,
            lambda_val: 0.45,
            gamma_val: 0.45,
            noise_sd: 1.0,
            mechanism: Mechanism::Mar,
            alpha0: -1.3,
            alpha_slope: 0.1,
            uni_prob: 0.2,
            seed,
            burn_in: 200,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n1 < 2 || self.n2 < 2 {
            return Err(Error::Config("need n1 >= 2 and n2 >= 2".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if self.powerlaw_exponent <= 1.0 {
            return Err(Error::Config("powerlaw exponent must exceed 1".into()));
        }
        if self.p_dim == 0 {
            return Err(Error::Config("p_dim must be at least 1".into()));
        }
        if self.p_dim > self.n1 {
            return Err(Error::Config(format!(
                "p_dim {} exceeds n1 {}; the covariate projector would be singular",
                self.p_dim, self.n1
            )));
        }
        if !(0.0..=1.0).contains(&self.beta_sparsity) {
            return Err(Error::Config("beta_sparsity must lie in [0,1]".into()));
        }
        if self.uni_prob <= 0.0 || self.uni_prob > 1.0 {
            return Err(Error::Config("uni_prob must lie in (0,1]".into()));
        }
        if self.b_rank >= self.n1.min(self.n2) {
            return Err(Error::Config(format!(
                "b_rank {} must be below min(n1,n2) = {}",
                self.b_rank,
                self.n1.min(self.n2)
            )));
        }
        if self.lambda_val.abs() + self.gamma_val.abs() >= 1.0 {
            return Err(Error::Config("lambda_val + gamma_val must stay below 1".into()));
        }
        Ok(())
    }

    pub fn rng(&self) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(self.seed)
    }
}

/// Draw in-degrees from the discrete power law `P(h) = c·h^{-exponent}`
/// truncated to `1..=n-1`, with `c` from direct summation over the support.
pub fn powerlaw_indegrees(n: usize, exponent: f64, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::Config(format!("network needs n >= 2, got {n}")));
    }
    let cumulative: Vec<f64> = (1..n)
        .scan(0.0, |acc, h| {
            *acc += (h as f64).powf(-exponent);
            Some(*acc)
        })
        .collect();
    let total = *cumulative.last().unwrap();
    let degrees = (0..n)
        .map(|_| {
            let u = rng.random::<f64>() * total;
            // inverse CDF by binary search over the cumulative weights
            let idx = cumulative.partition_point(|&c| c < u);
            idx.min(n - 2) + 1
        })
        .collect();
    Ok(degrees)
}

/// Assign each node's drawn in-degree as distinct followers chosen uniformly
/// among the other nodes: column `i` of the result carries node i's
/// followers, so column sums equal the drawn in-degrees exactly.
pub fn assign_followers(degrees: &[usize], rng: &mut impl Rng) -> DMatrix<f64> {
    let n = degrees.len();
    let mut adj = DMatrix::zeros(n, n);
    for (i, &deg) in degrees.iter().enumerate() {
        let picks = rand::seq::index::sample(rng, n - 1, deg);
        for raw in picks.iter() {
            let follower = if raw >= i { raw + 1 } else { raw };
            adj[(follower, i)] = 1.0;
        }
    }
    adj
}

/// Generate a power-law network adjacency matrix (zero diagonal).
pub fn powerlaw_network(n: usize, exponent: f64, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
    let degrees = powerlaw_indegrees(n, exponent, rng)?;
    Ok(assign_followers(&degrees, rng))
}

/// Draw the covariate matrix: leading column of ones, remaining columns
/// standard normal.
pub fn draw_covariates(n1: usize, p_dim: usize, rng: &mut impl Rng) -> Covariates {
    let mut x = DMatrix::zeros(n1, p_dim);
    for i in 0..n1 {
        x[(i, 0)] = 1.0;
        for j in 1..p_dim {
            x[(i, j)] = rng.sample(StandardNormal);
        }
    }
    Covariates::new(x).expect("generated covariates are finite")
}

/// Draw model coefficients: sparse uniform beta, low-rank intercept
/// `B = P⊥_X U Vᵀ`, and constant diagonal network effects.
pub fn draw_parameters(
    cfg: &SimConfig,
    cov: &Covariates,
    rng: &mut impl Rng,
) -> Result<ModelParams> {
    cfg.validate()?;
    let (lo, hi) = cfg.beta_range;
    let mut beta = DMatrix::zeros(cfg.p_dim, cfg.n2);
    for i in 0..cfg.p_dim {
        for j in 0..cfg.n2 {
            beta[(i, j)] = lo + (hi - lo) * rng.random::<f64>();
        }
    }
    let n_zero = (cfg.beta_sparsity * (cfg.p_dim * cfg.n2) as f64).round() as usize;
    let zeros = rand::seq::index::sample(rng, cfg.p_dim * cfg.n2, n_zero);
    for flat in zeros.iter() {
        // row-major flattening of the p × N2 coefficient grid
        beta[(flat / cfg.n2, flat % cfg.n2)] = 0.0;
    }

    let mut u = DMatrix::zeros(cfg.n1, cfg.b_rank);
    for i in 0..cfg.n1 {
        for r in 0..cfg.b_rank {
            u[(i, r)] = cfg.b_scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let mut v = DMatrix::zeros(cfg.n2, cfg.b_rank);
    for j in 0..cfg.n2 {
        for r in 0..cfg.b_rank {
            v[(j, r)] = cfg.b_scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let intercept_b = cov.complement_projector()? * &u * v.transpose();
    ModelParams::new(
        DVector::from_element(cfg.n1, cfg.lambda_val),
        DVector::from_element(cfg.n2, cfg.gamma_val),
        beta,
        intercept_b,
        cfg.b_rank,
    )
}

/// Observation probabilities implied by the configured mechanism.
pub fn observation_probs(cfg: &SimConfig, cov: &Covariates) -> DVector<f64> {
    match cfg.mechanism {
        Mechanism::Uni => DVector::from_element(cfg.n1, cfg.uni_prob),
        Mechanism::Mar => {
            // design (1, X_i) of length p+1 against (alpha0, slope, ..., slope)
            DVector::from_fn(cfg.n1, |i, _| {
                let eta = cfg.alpha0
                    + cfg.alpha_slope * cov.x().row(i).iter().sum::<f64>();
                logistic(eta)
            })
        }
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Ground truth kept alongside a simulated panel for evaluation.
#[derive(Debug, Clone)]
pub struct SimTruth {
    /// Complete response matrices, including entries hidden by the mask.
    pub responses: Vec<DMatrix<f64>>,
    /// Conditional means `A_t = E(Y_t | Y_{t-1})` along the kept trajectory.
    pub cond_means: Vec<DMatrix<f64>>,
    /// True per-row observation probabilities.
    pub probs: DVector<f64>,
}

/// A simulated panel plus its hidden ground truth.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub panel: PanelSeries,
    pub truth: SimTruth,
}

/// Simulate a panel: burn in from the zero matrix with fresh noise each step,
/// keep `horizon` further steps, then draw the mask i.i.d. over entries and
/// time with per-row probabilities.
pub fn simulate_panel(
    cfg: &SimConfig,
    nets: &NetworkPair,
    params: &ModelParams,
    cov: &Covariates,
    rng: &mut impl Rng,
) -> Result<SimOutput> {
    cfg.validate()?;
    let chk = check_stationarity(params, nets);
    if !chk.stationary {
        return Err(Error::Stationarity { sum: chk.kappa_sum });
    }
    let (n1, n2) = (cfg.n1, cfg.n2);
    let draw_noise = |rng: &mut dyn rand::RngCore| -> DMatrix<f64> {
        let mut e = DMatrix::zeros(n1, n2);
        if cfg.noise_sd > 0.0 {
            for i in 0..n1 {
                for j in 0..n2 {
                    e[(i, j)] = cfg.noise_sd * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        e
    };

    let mut state = DMatrix::zeros(n1, n2);
    for _ in 0..cfg.burn_in {
        state = conditional_mean(&state, params, nets, cov)? + draw_noise(rng);
    }

    let mut responses = Vec::with_capacity(cfg.horizon);
    let mut cond_means = Vec::with_capacity(cfg.horizon);
    for _ in 0..cfg.horizon {
        let mean = conditional_mean(&state, params, nets, cov)?;
        state = &mean + draw_noise(rng);
        cond_means.push(mean);
        responses.push(state.clone());
    }

    let probs = observation_probs(cfg, cov);
    let mask: Vec<DMatrix<f64>> = (0..cfg.horizon)
        .map(|_| {
            DMatrix::from_fn(n1, n2, |i, _| if rng.random::<f64>() < probs[i] { 1.0 } else { 0.0 })
        })
        .collect();

    let panel = PanelSeries::new(responses.clone(), mask)?;
    Ok(SimOutput { panel, truth: SimTruth { responses, cond_means, probs } })
}

/// Everything one replication needs: networks, covariates, coefficients,
/// and the simulated panel with its truth.
#[derive(Debug, Clone)]
pub struct SimWorld {
    pub config: SimConfig,
    pub nets: NetworkPair,
    pub cov: Covariates,
    pub params: ModelParams,
    pub output: SimOutput,
}

/// Run the whole generation pipeline from the config's seed.
pub fn simulate_world(cfg: &SimConfig) -> Result<SimWorld> {
    cfg.validate()?;
    let mut rng = cfg.rng();
    let a1 = powerlaw_network(cfg.n1, cfg.powerlaw_exponent, &mut rng)?;
    let a2 = powerlaw_network(cfg.n2, cfg.powerlaw_exponent, &mut rng)?;
    let nets = NetworkPair::normalize_networks(a1, a2)?;
    let cov = draw_covariates(cfg.n1, cfg.p_dim, &mut rng);
    let params = draw_parameters(cfg, &cov, &mut rng)?;
    let output = simulate_panel(cfg, &nets, &params, &cov, &mut rng)?;
    Ok(SimWorld { config: cfg.clone(), nets, cov, params, output })
}

/// Derive a replication seed from a master seed and an index path.
/// splitmix64-style mixing keeps distinct paths uncorrelated.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut state = master;
    for &part in path {
        state = state.wrapping_add(0x9E3779B97F4A7C15).wrapping_add(part);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        state = z ^ (z >> 31);
    }
    state
}

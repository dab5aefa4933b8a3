//! Run configuration: a JSON file selects the data-generation, tuning, and
//! input/output settings; command-line flags override seed, threads, and the
//! output directory.

use serde::Deserialize;

use mnar_core::network_effects::Step1Config;
use mnar_core::regression::Step2Config;
use mnar_core::simulate::{Mechanism, SimConfig};

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum MechanismChoice {
    Mar,
    Uni,
}

impl From<MechanismChoice> for Mechanism {
    fn from(m: MechanismChoice) -> Self {
        match m {
            MechanismChoice::Mar => Mechanism::Mar,
            MechanismChoice::Uni => Mechanism::Uni,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SimBlock {
    pub n1: Option<usize>,
    pub n2: Option<usize>,
    pub horizon: Option<usize>,
    pub powerlaw_exponent: Option<f64>,
    pub p_dim: Option<usize>,
    pub beta_sparsity: Option<f64>,
    pub beta_range: Option<(f64, f64)>,
    pub b_rank: Option<usize>,
    pub b_scale: Option<f64>,
    pub lambda_val: Option<f64>,
    pub gamma_val: Option<f64>,
    pub noise_sd: Option<f64>,
    pub alpha0: Option<f64>,
    pub alpha_slope: Option<f64>,
    pub uni_prob: Option<f64>,
    pub burn_in: Option<usize>,
}

impl SimBlock {
    /// Overlay the block onto a base configuration.
    pub fn apply(&self, cfg: &mut SimConfig) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        set!(
            n1,
            n2,
            horizon,
            powerlaw_exponent,
            p_dim,
            beta_sparsity,
            b_rank,
            b_scale,
            lambda_val,
            gamma_val,
            noise_sd,
            alpha0,
            alpha_slope,
            uni_prob,
            burn_in
        );
        if let Some(v) = self.beta_range {
            cfg.beta_range = v;
        }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Step1Block {
    pub nu1: Option<f64>,
    pub nu2: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub denominator_floor: Option<f64>,
}

impl Step1Block {
    pub fn build(&self, mut base: Step1Config) -> Step1Config {
        if let Some(v) = self.nu1 {
            base.nu1 = v;
        }
        if let Some(v) = self.nu2 {
            base.nu2 = v;
        }
        if let Some(v) = self.tol {
            base.tol = v;
        }
        if let Some(v) = self.max_iter {
            base.max_iter = v;
        }
        if let Some(v) = self.denominator_floor {
            base.denominator_floor = v;
        }
        base
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Step2Block {
    pub nu3: Option<f64>,
    pub nu4: Option<f64>,
    pub mix_alpha: Option<f64>,
}

impl Step2Block {
    pub fn build(&self, mut base: Step2Config) -> Step2Config {
        if let Some(v) = self.nu3 {
            base.nu3 = v;
        }
        if let Some(v) = self.nu4 {
            base.nu4 = v;
        }
        if let Some(v) = self.mix_alpha {
            base.mix_alpha = v;
        }
        base
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPoint {
    pub nu1: f64,
    pub nu2: f64,
    pub nu3: f64,
    pub nu4: f64,
    pub mix_alpha: f64,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CvBlock {
    pub folds: Option<usize>,
    pub time_blocked: Option<bool>,
    pub grid: Option<Vec<GridPoint>>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellBlock {
    pub n: usize,
    pub horizon: usize,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkBlock {
    pub cells: Option<Vec<CellBlock>>,
    pub mechanisms: Option<Vec<MechanismChoice>>,
    pub replications: Option<usize>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InputsBlock {
    pub panel: Option<String>,
    pub row_network: Option<String>,
    pub col_network: Option<String>,
    pub covariates: Option<String>,
    pub fit: Option<String>,
}

/// Top-level run configuration.
#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<String>,
    /// Also write per-time dense matrices next to the long-format panel.
    #[serde(default)]
    pub dense: bool,
    pub mechanism: Option<MechanismChoice>,
    #[serde(default)]
    pub sim: SimBlock,
    #[serde(default)]
    pub inputs: InputsBlock,
    #[serde(default)]
    pub step1: Step1Block,
    #[serde(default)]
    pub step2: Step2Block,
    pub debias_rounds: Option<usize>,
    #[serde(default)]
    pub cv: CvBlock,
    #[serde(default)]
    pub benchmark: BenchmarkBlock,
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| anyhow::anyhow!("invalid config {}: {e}", path.display()))?;
        Ok(cfg)
    }
}

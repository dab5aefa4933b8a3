//! Network autoregression for incomplete matrix-valued time series.
//!
//! A panel of `N1×N2` matrices evolves through row-network and
//! column-network autoregression plus a covariate effect and a low-rank
//! intercept, with entries observed at row-dependent probabilities. The
//! crate provides:
//!
//! - the domain types and the conditional-mean map ([`model`]),
//! - synthetic data generation ([`simulate`]),
//! - observation-probability estimation and inverse-probability weighting
//!   ([`missingness`]),
//! - the two estimation steps: penalized profile fitting of the network
//!   effects ([`network_effects`]) and ridge/soft-threshold recovery of the
//!   regression surface ([`regression`]),
//! - multi-round bias reduction ([`debias`]),
//! - static SVT baselines ([`svt`]),
//! - evaluation, tuning, and the Monte-Carlo benchmark harness
//!   ([`eval`], [`benchmark`]).

pub mod benchmark;
pub mod debias;
pub mod error;
pub mod eval;
pub mod missingness;
pub mod model;
pub mod network_effects;
pub mod regression;
pub mod simulate;
pub mod svt;

pub use error::{Error, Result};
pub use model::{
    check_stationarity, conditional_mean, Covariates, ModelParams, NetworkPair, PanelSeries,
    StationarityCheck,
};
pub use simulate::{Mechanism, SimConfig, SimWorld};

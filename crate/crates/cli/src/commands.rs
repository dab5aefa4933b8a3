//! Command implementations. Each command is a pure function of its input
//! files, the run configuration, and the seed.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use nalgebra::DVector;

use mnar_core::benchmark::{run_benchmark, BenchmarkSpec, CellSpec};
use mnar_core::debias::{debias_with_quadratic, default_rounds};
use mnar_core::eval::{cross_validate, rolling_recover, CvPlan, TuningPoint};
use mnar_core::missingness::{
    build_weighted_panel, estimate_uniform_rate, fit_logistic_missing, MissingModel,
};
use mnar_core::model::{Covariates, ModelParams, NetworkPair, PanelSeries};
use mnar_core::network_effects::{fit_with_quadratic, ProfileQuadratic, Step1Config};
use mnar_core::regression::{fit_regression, Step2Config};
use mnar_core::simulate::{simulate_world, Mechanism, SimConfig};

use crate::config::RunConfig;
use crate::io;

pub struct Context_ {
    pub config: RunConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl Context_ {
    pub fn out_file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn mechanism(cfg: &RunConfig) -> Mechanism {
    cfg.mechanism.map(Into::into).unwrap_or(Mechanism::Mar)
}

fn input_path(field: &Option<String>, what: &str) -> Result<PathBuf> {
    let raw = field
        .as_ref()
        .ok_or_else(|| anyhow!("config is missing inputs.{what}"))?;
    let path = PathBuf::from(raw);
    if !path.exists() {
        return Err(anyhow!("inputs.{what} does not exist: {}", path.display()));
    }
    Ok(path)
}

fn load_dataset(ctx: &Context_) -> Result<(PanelSeries, NetworkPair, Covariates)> {
    let panel = io::read_panel(&input_path(&ctx.config.inputs.panel, "panel")?)?;
    let cov =
        io::read_covariates(&input_path(&ctx.config.inputs.covariates, "covariates")?)?;
    let a1 = io::read_edges(
        &input_path(&ctx.config.inputs.row_network, "row_network")?,
        panel.n1(),
    )?;
    let a2 = io::read_edges(
        &input_path(&ctx.config.inputs.col_network, "col_network")?,
        panel.n2(),
    )?;
    let nets = NetworkPair::normalize_networks(a1, a2)?;
    if cov.n_rows() != panel.n1() {
        return Err(anyhow!(
            "covariates have {} rows but the panel has {}",
            cov.n_rows(),
            panel.n1()
        ));
    }
    Ok((panel, nets, cov))
}

fn sim_config(ctx: &Context_) -> Result<SimConfig> {
    let block = &ctx.config.sim;
    let (n1, n2, horizon) = match (block.n1, block.n2, block.horizon) {
        (Some(n1), Some(n2), Some(t)) => (n1, n2, t),
        _ => return Err(anyhow!("simulate needs sim.n1, sim.n2 and sim.horizon")),
    };
    let mut cfg = SimConfig::new(n1, n2, horizon, ctx.seed);
    cfg.mechanism = mechanism(&ctx.config);
    block.apply(&mut cfg);
    cfg.seed = ctx.seed;
    Ok(cfg)
}

pub fn cmd_simulate(ctx: &Context_) -> Result<()> {
    let cfg = sim_config(ctx)?;
    cfg.validate()?;
    log::info!("simulating {}x{} panel over {} steps", cfg.n1, cfg.n2, cfg.horizon);
    let world = simulate_world(&cfg)?;

    io::write_text(&ctx.out_file("panel.csv"), &io::panel_to_csv(&world.output.panel))?;
    io::write_text(&ctx.out_file("row_network.csv"), &io::edges_to_csv(world.nets.a1()))?;
    io::write_text(&ctx.out_file("col_network.csv"), &io::edges_to_csv(world.nets.a2()))?;
    io::write_text(&ctx.out_file("covariates.csv"), &io::covariates_to_csv(&world.cov))?;

    let (left, right) = io::low_rank_factors(&world.params.intercept_b, world.params.rank_b);
    let alpha = match cfg.mechanism {
        Mechanism::Mar => std::iter::once(cfg.alpha0)
            .chain(std::iter::repeat_n(cfg.alpha_slope, cfg.p_dim))
            .collect(),
        Mechanism::Uni => vec![],
    };
    let truth = io::TruthBundle {
        lambda: io::vec_of(&world.params.lambda),
        gamma: io::vec_of(&world.params.gamma),
        beta: io::rows_of(&world.params.beta),
        b_left: io::rows_of(&left),
        b_right: io::rows_of(&right),
        rank_b: world.params.rank_b,
        alpha,
        probs: io::vec_of(&world.output.truth.probs),
    };
    io::write_json(&ctx.out_file("truth.json"), &truth)?;
    io::write_text(&ctx.out_file("truth_b.csv"), &io::matrix_to_csv(&world.params.intercept_b))?;
    if ctx.config.dense {
        let dir = ctx.out_file("dense");
        std::fs::create_dir_all(&dir)?;
        for (t, (y, r)) in world
            .output
            .panel
            .responses()
            .iter()
            .zip(world.output.panel.mask())
            .enumerate()
        {
            io::write_text(&dir.join(format!("panel_t{}.csv", t + 1)), &io::frame_to_dense_csv(y))?;
            io::write_text(&dir.join(format!("mask_t{}.csv", t + 1)), &io::frame_to_dense_csv(r))?;
        }
    }
    Ok(())
}

fn fit_missingness(
    panel: &PanelSeries,
    cov: &Covariates,
    mech: Mechanism,
) -> mnar_core::Result<MissingModel> {
    match mech {
        Mechanism::Mar => fit_logistic_missing(panel.mask(), cov),
        Mechanism::Uni => estimate_uniform_rate(panel.mask()),
    }
}

pub fn cmd_estimate(ctx: &Context_) -> Result<()> {
    let started = Instant::now();
    let (panel, nets, cov) = load_dataset(ctx)?;
    let mech = mechanism(&ctx.config);
    let step1 = ctx.config.step1.build(Step1Config::default());
    let step2 = ctx.config.step2.build(Step2Config::default());
    let rounds = ctx.config.debias_rounds.unwrap_or_else(|| default_rounds(panel.horizon()));

    let mut timings = std::collections::BTreeMap::new();
    let t_miss = Instant::now();
    let mm = fit_missingness(&panel, &cov, mech)?;
    let wp = build_weighted_panel(&panel, &mm)?;
    timings.insert("missingness".to_string(), t_miss.elapsed().as_millis());

    let t_step1 = Instant::now();
    let quad = ProfileQuadratic::new(&wp, &nets)?;
    let fit = fit_with_quadratic(&quad, &step1)?;
    timings.insert("step1".to_string(), t_step1.elapsed().as_millis());

    let t_debias = Instant::now();
    let bias = debias_with_quadratic(&fit, &quad, &wp, &nets, &step1, rounds)?;
    timings.insert("debias".to_string(), t_debias.elapsed().as_millis());

    let t_step2 = Instant::now();
    let reg = fit_regression(&wp, &nets, &cov, &bias.lambda, &bias.gamma, &step2)?;
    timings.insert("step2".to_string(), t_step2.elapsed().as_millis());

    // in-sample reconstruction quality on the observed entries
    let params = ModelParams::new(
        bias.lambda.clone(),
        bias.gamma.clone(),
        reg.beta_hat.clone(),
        reg.b_hat.clone(),
        reg.b_rank_hat,
    )?;
    let frames = rolling_recover(&params, &wp, &nets, &cov)?;
    let mut sq = 0.0;
    let mut count = 0usize;
    for t in 0..panel.horizon() {
        for i in 0..panel.n1() {
            for j in 0..panel.n2() {
                if let Some(y) = panel.observed(t, i, j) {
                    let d = frames[t][(i, j)] - y;
                    sq += d * d;
                    count += 1;
                }
            }
        }
    }
    let observed_rmse = (sq / count.max(1) as f64).sqrt();
    timings.insert("total".to_string(), started.elapsed().as_millis());

    let report = io::FitReport {
        n1: panel.n1(),
        n2: panel.n2(),
        horizon: panel.horizon(),
        mechanism: mech.to_string(),
        alpha: io::vec_of(&mm.alpha),
        probs: io::vec_of(&mm.probs),
        lambda_raw: io::vec_of(&fit.lambda_hat),
        gamma_raw: io::vec_of(&fit.gamma_hat),
        lambda: io::vec_of(&bias.lambda),
        gamma: io::vec_of(&bias.gamma),
        beta: io::rows_of(&reg.beta_hat),
        b_rank: reg.b_rank_hat,
        singular_values: reg.singular_values.clone(),
        debias_rounds: bias.rounds,
        bias_sup_norms: bias.sup_norms.clone(),
        contraction_violations: bias.contraction_violations.clone(),
        sigma2_condition: bias.sigma2_condition,
        observed_rmse,
        iterations: fit.iterations,
        converged: fit.converged,
        objective_trace: fit.objective_trace.clone(),
        nu1: step1.nu1,
        nu2: step1.nu2,
        nu3: step2.nu3,
        nu4: step2.nu4,
        mix_alpha: step2.mix_alpha,
        timings_ms: timings,
    };
    io::write_json(&ctx.out_file("fit.json"), &report)?;
    io::write_text(&ctx.out_file("fit_b.csv"), &io::matrix_to_csv(&reg.b_hat))?;
    Ok(())
}

pub fn cmd_complete(ctx: &Context_) -> Result<()> {
    let (panel, nets, cov) = load_dataset(ctx)?;
    let fit_path = input_path(&ctx.config.inputs.fit, "fit")?;
    let report: io::FitReport = io::read_json(&fit_path)?;
    let b_path = fit_path
        .parent()
        .unwrap_or(Path::new("."))
        .join("fit_b.csv");
    let b_hat = io::read_matrix(&b_path)
        .with_context(|| format!("fit sidecar {}", b_path.display()))?;
    if report.n1 != panel.n1() || report.n2 != panel.n2() {
        return Err(anyhow!("fit.json dimensions do not match the panel"));
    }

    let params = ModelParams::new(
        DVector::from_vec(report.lambda.clone()),
        DVector::from_vec(report.gamma.clone()),
        io::matrix_from_rows(&report.beta)?,
        b_hat,
        report.b_rank,
    )?;
    let mm = MissingModel {
        alpha: DVector::from_vec(report.alpha.clone()),
        probs: DVector::from_vec(report.probs.clone()),
        mechanism: if report.mechanism == "UNI" { Mechanism::Uni } else { Mechanism::Mar },
    };
    let wp = build_weighted_panel(&panel, &mm)?;
    let frames = rolling_recover(&params, &wp, &nets, &cov)?;

    let mut a_out = String::from("t,i,j,value\n");
    let mut filled = String::from("t,i,j,observed,value\n");
    for t in 0..panel.horizon() {
        for i in 0..panel.n1() {
            for j in 0..panel.n2() {
                use std::fmt::Write as _;
                let recovered = frames[t][(i, j)];
                let _ = writeln!(a_out, "{},{},{},{}", t + 1, i + 1, j + 1, recovered);
                let (observed, value) = match panel.observed(t, i, j) {
                    Some(y) => (1, y),
                    None => (0, recovered),
                };
                let _ =
                    writeln!(filled, "{},{},{},{},{}", t + 1, i + 1, j + 1, observed, value);
            }
        }
    }
    io::write_text(&ctx.out_file("a_hat.csv"), &a_out)?;
    io::write_text(&ctx.out_file("completed.csv"), &filled)?;
    if ctx.config.dense {
        let dir = ctx.out_file("dense");
        std::fs::create_dir_all(&dir)?;
        for (t, frame) in frames.iter().enumerate() {
            io::write_text(&dir.join(format!("a_hat_t{}.csv", t + 1)), &io::frame_to_dense_csv(frame))?;
        }
    }
    Ok(())
}

pub fn cmd_benchmark(ctx: &Context_) -> Result<()> {
    let block = &ctx.config.benchmark;
    let cells = block
        .cells
        .as_ref()
        .ok_or_else(|| anyhow!("benchmark needs benchmark.cells"))?
        .iter()
        .map(|c| CellSpec { n: c.n, horizon: c.horizon })
        .collect::<Vec<_>>();
    let mechanisms: Vec<Mechanism> = block
        .mechanisms
        .clone()
        .map(|ms| ms.into_iter().map(Into::into).collect())
        .unwrap_or_else(|| vec![Mechanism::Mar]);
    let replications = block.replications.unwrap_or(50);

    let mut spec = BenchmarkSpec::new(cells, mechanisms, replications, ctx.seed);
    ctx.config.sim.apply(&mut spec.base);
    spec.step1 = ctx.config.step1.build(spec.step1);
    spec.step2 = ctx.config.step2.build(spec.step2);
    spec.debias_rounds = ctx.config.debias_rounds;
    log::info!(
        "running {} cells x {} mechanisms x {} replications",
        spec.cells.len(),
        spec.mechanisms.len(),
        spec.replications
    );
    let table = run_benchmark(&spec);
    io::write_text(&ctx.out_file("results.csv"), &table.to_csv())?;
    io::write_text(&ctx.out_file("table.txt"), &table.render())?;
    Ok(())
}

pub fn cmd_cv(ctx: &Context_) -> Result<()> {
    let (panel, nets, cov) = load_dataset(ctx)?;
    let block = &ctx.config.cv;
    let mut plan = match &block.grid {
        Some(points) => CvPlan::new(
            points
                .iter()
                .map(|g| TuningPoint {
                    nu1: g.nu1,
                    nu2: g.nu2,
                    nu3: g.nu3,
                    nu4: g.nu4,
                    mix_alpha: g.mix_alpha,
                })
                .collect(),
            ctx.seed,
        ),
        None => CvPlan::default_grid(ctx.seed),
    };
    if let Some(folds) = block.folds {
        plan.folds = folds;
    }
    if let Some(tb) = block.time_blocked {
        plan.time_blocked = tb;
    }
    plan.debias_rounds = ctx.config.debias_rounds;
    let choice = cross_validate(&panel, &nets, &cov, mechanism(&ctx.config), &plan)?;

    #[derive(serde::Serialize)]
    struct Score {
        nu1: f64,
        nu2: f64,
        nu3: f64,
        nu4: f64,
        mix_alpha: f64,
        score: f64,
    }
    #[derive(serde::Serialize)]
    struct CvReport {
        chosen: Score,
        scores: Vec<Score>,
    }
    let to_score = |p: &TuningPoint, s: f64| Score {
        nu1: p.nu1,
        nu2: p.nu2,
        nu3: p.nu3,
        nu4: p.nu4,
        mix_alpha: p.mix_alpha,
        score: s,
    };
    let report = CvReport {
        chosen: to_score(
            &choice.point,
            choice
                .scores
                .iter()
                .find(|(p, _)| *p == choice.point)
                .map(|(_, s)| *s)
                .unwrap_or(f64::NAN),
        ),
        scores: choice.scores.iter().map(|(p, s)| to_score(p, *s)).collect(),
    };
    io::write_json(&ctx.out_file("cv.json"), &report)?;
    Ok(())
}

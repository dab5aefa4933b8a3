//! Acceptance suite: every release gate runs here, one test per criterion,
//! each printing a PASS/FAIL line (run with `--nocapture` to see them).
//!
//! The Monte-Carlo criteria (4–6) share one benchmark run at R = 50
//! replications per cell and compare against the reference table values.

use mnar_core::benchmark::{run_benchmark, BenchmarkSpec, CellSpec};
use mnar_core::debias::debias_rounds;
use mnar_core::missingness::{
    build_weighted_panel, estimate_uniform_rate, fit_logistic_missing, MissingModel,
};
use mnar_core::model::{NetworkPair, PanelSeries};
use mnar_core::network_effects::{
    fit_network_effects, fit_with_quadratic, profile_hessian, ProfileQuadratic, Step1Config,
};
use mnar_core::regression::{fit_regression, soft_threshold_svd, Step2Config};
use mnar_core::simulate::{derive_seed, simulate_panel, simulate_world, Mechanism, SimConfig};
use nalgebra::{DMatrix, DVector};
use once_cell::sync::Lazy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

fn pass(criterion: &str, detail: String) {
    println!("criterion {criterion}: PASS - {detail}");
}

fn fail(criterion: &str, detail: String) -> ! {
    println!("criterion {criterion}: FAIL - {detail}");
    panic!("criterion {criterion} failed: {detail}");
}

fn check(criterion: &str, ok: bool, detail: String) {
    if ok {
        pass(criterion, detail);
    } else {
        fail(criterion, detail);
    }
}

// ---------------------------------------------------------------------------
// criterion 1: blockwise fit equals a dense joint solve under full observation
// ---------------------------------------------------------------------------

fn dense_joint_solve(
    wp: &mnar_core::missingness::WeightedPanel,
    nets: &NetworkPair,
    nu1: f64,
    nu2: f64,
) -> (DVector<f64>, DVector<f64>) {
    let (n1, n2) = (wp.n1(), wp.n2());
    let m = n1 + n2;
    let mut mat = DMatrix::zeros(m, m);
    let mut rhs = DVector::zeros(m);
    for tau in 0..wp.horizon() - 1 {
        let u = nets.w1() * &wp.z_lag_centered[tau];
        let v = &wp.z_lag_centered[tau] * nets.w2();
        let resp = &wp.z_centered[tau + 1];
        for i in 0..n1 {
            for j in 0..n2 {
                mat[(i, i)] += u[(i, j)] * u[(i, j)];
                mat[(n1 + j, n1 + j)] += v[(i, j)] * v[(i, j)];
                mat[(i, n1 + j)] += u[(i, j)] * v[(i, j)];
                mat[(n1 + j, i)] += u[(i, j)] * v[(i, j)];
                rhs[i] += u[(i, j)] * resp[(i, j)];
                rhs[n1 + j] += v[(i, j)] * resp[(i, j)];
            }
        }
    }
    for i in 0..n1 {
        mat[(i, i)] += nu1;
    }
    for j in 0..n2 {
        mat[(n1 + j, n1 + j)] += nu2;
    }
    let sol = mat.lu().solve(&rhs).expect("joint normal equations solvable");
    (sol.rows(0, n1).into_owned(), sol.rows(n1, n2).into_owned())
}

#[test]
fn criterion_1_step1_oracle_equivalence() {
    let started = std::time::Instant::now();
    let mut worst = 0.0f64;
    for rep in 0..20 {
        let mut cfg = SimConfig::new(4, 4, 50, 1000 + rep);
        cfg.p_dim = 2;
        cfg.b_rank = 1;
        cfg.burn_in = 50;
        cfg.mechanism = Mechanism::Uni;
        cfg.uni_prob = 1.0;
        let world = simulate_world(&cfg).unwrap();
        let mm = estimate_uniform_rate(world.output.panel.mask()).unwrap();
        let wp = build_weighted_panel(&world.output.panel, &mm).unwrap();
        let mut s1 = Step1Config::with_penalties(1.0, 1.0);
        s1.tol = 1e-12;
        s1.max_iter = 1000;
        let fit = fit_network_effects(&wp, &world.nets, &s1).unwrap();
        let (lam, gam) = dense_joint_solve(&wp, &world.nets, s1.nu1, s1.nu2);
        worst = worst
            .max((fit.lambda_hat - lam).amax())
            .max((fit.gamma_hat - gam).amax());
    }
    let elapsed = started.elapsed();
    check(
        "1",
        worst < 1e-6 && elapsed.as_secs_f64() < 1.0,
        format!("20 joint-solve comparisons, sup gap {worst:.2e}, {elapsed:?} (< 1 s)"),
    );
}

// ---------------------------------------------------------------------------
// criterion 2: analytic Hessian equals central finite differences
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_hessian_matches_finite_differences() {
    let mut worst = 0.0f64;
    for rep in 0..5 {
        let mut cfg = SimConfig::new(3, 3, 4, 2000 + rep);
        cfg.p_dim = 2;
        cfg.b_rank = 1;
        cfg.burn_in = 20;
        cfg.mechanism = Mechanism::Uni;
        cfg.uni_prob = 0.6;
        let world = simulate_world(&cfg).unwrap();
        let mm = estimate_uniform_rate(world.output.panel.mask()).unwrap();
        let wp = build_weighted_panel(&world.output.panel, &mm).unwrap();
        let s1 = Step1Config::with_penalties(0.4, 0.9);
        let hess = profile_hessian(&wp, &world.nets, &s1).unwrap();
        let q = ProfileQuadratic::new(&wp, &world.nets).unwrap();
        let m = 6;
        let mt = (m * wp.horizon()) as f64;
        let h = 1e-4;
        let mut rng = ChaCha20Rng::seed_from_u64(17 + rep);
        let theta0 = DVector::from_fn(m, |_, _| rng.random::<f64>() * 0.4 - 0.2);
        let eval = |theta: &DVector<f64>| {
            q.objective(&theta.rows(0, 3).into_owned(), &theta.rows(3, 3).into_owned(), &s1)
        };
        let scale = hess.amax();
        for a in 0..m {
            for b in 0..m {
                let mut pp = theta0.clone();
                pp[a] += h;
                pp[b] += h;
                let mut pm = theta0.clone();
                pm[a] += h;
                pm[b] -= h;
                let mut mp = theta0.clone();
                mp[a] -= h;
                mp[b] += h;
                let mut mm_ = theta0.clone();
                mm_[a] -= h;
                mm_[b] -= h;
                let fd = (eval(&pp) - eval(&pm) - eval(&mp) + eval(&mm_)) / (4.0 * h * h) / mt;
                worst = worst.max((fd - hess[(a, b)]).abs() / hess[(a, b)].abs().max(scale));
            }
        }
    }
    check("2", worst < 1e-5, format!("worst relative Hessian gap {worst:.2e} (< 1e-5)"));
}

// ---------------------------------------------------------------------------
// criterion 3: soft-thresholding equals the nuclear-norm prox oracle
// ---------------------------------------------------------------------------

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
fn criterion_3_prox_operator_correctness() {
    let mut rng = ChaCha20Rng::seed_from_u64(33);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let m = DMatrix::from_fn(5, 4, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let closed = soft_threshold_svd(&m, 0.5).unwrap();
        let oracle = prox_subgradient_oracle(&m, 0.5, 10_000);
        worst = worst.max((closed - oracle).norm());
    }
    check("3", worst < 1e-4, format!("worst Frobenius gap to prox oracle {worst:.2e} (< 1e-4)"));
}

// ---------------------------------------------------------------------------
// criteria 4-6: reference-table reproduction at R = 50
// ---------------------------------------------------------------------------

const BENCH_REPS: usize = 50;

static MAR_TABLE: Lazy<mnar_core::benchmark::BenchmarkTable> = Lazy::new(|| {
    let spec = BenchmarkSpec::new(
        vec![
            CellSpec { n: 100, horizon: 30 },
            CellSpec { n: 100, horizon: 60 },
            CellSpec { n: 100, horizon: 100 },
        ],
        vec![Mechanism::Mar],
        BENCH_REPS,
        20240,
    );
    run_benchmark(&spec)
});

static UNI_TABLE: Lazy<mnar_core::benchmark::BenchmarkTable> = Lazy::new(|| {
    let spec = BenchmarkSpec::new(
        vec![CellSpec { n: 100, horizon: 30 }],
        vec![Mechanism::Uni],
        BENCH_REPS,
        20241,
    );
    run_benchmark(&spec)
});

#[test]
fn criterion_4a_lambda_reproduction() {
    // reference RMSE targets for the network effects, (T, ORG, ADJ, tol)
    let targets = [(30usize, 0.383, 0.337, 0.04), (100usize, 0.280, 0.230, 0.03)];
    let mut detail = String::new();
    let mut ok = true;
    for (t, org_ref, adj_ref, tol) in targets {
        let cell = MAR_TABLE.find(100, t, Mechanism::Mar).unwrap();
        let org = cell.reports[3].rmse_lambda.unwrap();
        let adj = cell.reports[4].rmse_lambda.unwrap();
        ok &= (org - org_ref).abs() <= tol && (adj - adj_ref).abs() <= tol;
        detail.push_str(&format!(
            "T={t}: ORG {org:.3} (ref {org_ref} +/- {tol}), ADJ {adj:.3} (ref {adj_ref} +/- {tol}); "
        ));
        detail.push_str(&format!("failures={}; ", cell.failures));
    }
    check("4 (lambda cells)", ok, detail);
}

#[test]
fn criterion_4b_adj_test_error_reproduction() {
    let cell = MAR_TABLE.find(100, 100, Mechanism::Mar).unwrap();
    let err = cell.reports[4].test_error;
    check(
        "4 (ADJ test error)",
        (err - 0.069).abs() <= 0.01,
        format!("ADJ test error at T=100 is {err:.3}, reference 0.069 +/- 0.01"),
    );
}

#[test]
fn criterion_5_baseline_ordering() {
    let mut detail = String::new();
    let mut ok = true;
    let mut cells: Vec<&mnar_core::benchmark::CellResult> = MAR_TABLE.cells.iter().collect();
    cells.extend(UNI_TABLE.cells.iter());
    for cell in cells {
        let e = |m: usize| cell.reports[m].test_error;
        let (sep, avg, sum, org, adj) = (e(0), e(1), e(2), e(3), e(4));
        let cell_ok = adj < org && adj < sep.min(avg).min(sum);
        ok &= cell_ok;
        detail.push_str(&format!(
            "[{} T={}] SEP {sep:.3} AVG {avg:.3} SUM {sum:.3} ORG {org:.3} ADJ {adj:.3} -> {}; ",
            cell.mechanism,
            cell.cell.horizon,
            if cell_ok { "ok" } else { "violated" }
        ));
    }
    check("5", ok, detail);
}

#[test]
fn criterion_6_consistency_trend() {
    let vals: Vec<f64> = [30, 60, 100]
        .iter()
        .map(|&t| {
            MAR_TABLE
                .find(100, t, Mechanism::Mar)
                .unwrap()
                .reports[4]
                .rmse_lambda
                .unwrap()
        })
        .collect();
    check(
        "6",
        vals[0] > vals[1] && vals[1] > vals[2],
        format!(
            "ADJ lambda RMSE over T in (30,60,100): {:.3} > {:.3} > {:.3} (ref 0.337, 0.282, 0.230)",
            vals[0], vals[1], vals[2]
        ),
    );
}

// ---------------------------------------------------------------------------
// criterion 7: weighting and correction identities
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_identities() {
    // entrywise Z(Y-Z) = Z^2 (p-1) on a MAR panel
    let mut cfg = SimConfig::new(20, 15, 10, 7000);
    cfg.b_rank = 3;
    cfg.burn_in = 50;
    let world = simulate_world(&cfg).unwrap();
    let mm = fit_logistic_missing(world.output.panel.mask(), &world.cov).unwrap();
    let wp = build_weighted_panel(&world.output.panel, &mm).unwrap();
    let mut worst = 0.0f64;
    for t in 0..cfg.horizon {
        for i in 0..cfg.n1 {
            for j in 0..cfg.n2 {
                let z = wp.z[t][(i, j)];
                let lhs = match world.output.panel.observed(t, i, j) {
                    Some(y) => z * (y - z),
                    None => 0.0,
                };
                worst = worst.max((lhs - wp.correction[t][(i, j)]).abs());
            }
        }
    }

    // full observation: corrections and the raw bias vanish exactly at nu = 0.
    // a ring network keeps every block denominator positive without a ridge
    let mut cfg_full = SimConfig::new(10, 10, 8, 7001);
    cfg_full.b_rank = 2;
    cfg_full.burn_in = 40;
    cfg_full.mechanism = Mechanism::Uni;
    cfg_full.uni_prob = 1.0;
    let world_full = simulate_world(&cfg_full).unwrap();
    let ring = DMatrix::from_fn(10, 10, |i, k| {
        if (i + 1) % 10 == k || (i + 3) % 10 == k { 1.0 } else { 0.0 }
    });
    let nets_full = NetworkPair::normalize_networks(ring.clone(), ring.transpose()).unwrap();
    let mm_full = estimate_uniform_rate(world_full.output.panel.mask()).unwrap();
    let wp_full = build_weighted_panel(&world_full.output.panel, &mm_full).unwrap();
    let s1 = Step1Config::default();
    let q = ProfileQuadratic::new(&wp_full, &nets_full).unwrap();
    let fit = fit_with_quadratic(&q, &s1).unwrap();
    let bias = debias_rounds(&fit, &wp_full, &nets_full, &s1, 1).unwrap();
    let exact = q.kappa().amax() == 0.0
        && q.corr_gamma().amax() == 0.0
        && bias.b_raw[0].amax() == 0.0
        && bias.lambda == fit.lambda_hat
        && bias.gamma == fit.gamma_hat;
    check(
        "7",
        worst < 1e-10 && exact,
        format!(
            "weighting identity sup gap {worst:.2e} (< 1e-10); full observation: kappa = corr = raw bias = 0 exactly: {exact}"
        ),
    );
}

// ---------------------------------------------------------------------------
// criterion 8: property suites
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_property_suites() {
    // monotone objective across sweeps
    let mut cfg = SimConfig::new(30, 25, 12, 8000);
    cfg.b_rank = 3;
    cfg.burn_in = 50;
    let world = simulate_world(&cfg).unwrap();
    let mm = fit_logistic_missing(world.output.panel.mask(), &world.cov).unwrap();
    let wp = build_weighted_panel(&world.output.panel, &mm).unwrap();
    let s1 = Step1Config::with_penalties(500.0, 500.0);
    let fit = fit_network_effects(&wp, &world.nets, &s1).unwrap();
    let monotone = fit
        .objective_trace
        .windows(2)
        .all(|w| w[1] <= w[0] + 1e-9 * (1.0 + w[0].abs()));

    // identification of the fitted intercept
    let s2 = Step2Config { nu3: 1.0, nu4: 1.0, mix_alpha: 1.0 };
    let reg = fit_regression(&wp, &world.nets, &world.cov, &fit.lambda_hat, &fit.gamma_hat, &s2)
        .unwrap();
    let xtb = (world.cov.x().transpose() * &reg.b_hat).amax();

    // permutation equivariance of the fitted effects
    let perm: Vec<usize> = vec![4, 0, 3, 1, 2];
    let mut cfg_p = SimConfig::new(5, 4, 12, 8001);
    cfg_p.p_dim = 2;
    cfg_p.b_rank = 2;
    cfg_p.burn_in = 30;
    let wp_world = simulate_world(&cfg_p).unwrap();
    let mm_p = fit_logistic_missing(wp_world.output.panel.mask(), &wp_world.cov).unwrap();
    let wp_p = build_weighted_panel(&wp_world.output.panel, &mm_p).unwrap();
    let s1p = Step1Config::with_penalties(500.0, 500.0);
    let fit_base = fit_network_effects(&wp_p, &wp_world.nets, &s1p).unwrap();
    let permute_rows =
        |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(perm[i], j)]);
    let a1p = DMatrix::from_fn(5, 5, |i, k| wp_world.nets.a1()[(perm[i], perm[k])]);
    let nets_p = NetworkPair::normalize_networks(a1p, wp_world.nets.a2().clone()).unwrap();
    let panel_p = PanelSeries::new(
        wp_world.output.panel.responses().iter().map(&permute_rows).collect(),
        wp_world.output.panel.mask().iter().map(&permute_rows).collect(),
    )
    .unwrap();
    let mmx = MissingModel {
        alpha: mm_p.alpha.clone(),
        probs: DVector::from_fn(5, |i, _| mm_p.probs[perm[i]]),
        mechanism: mm_p.mechanism,
    };
    let wp_perm = build_weighted_panel(&panel_p, &mmx).unwrap();
    let fit_perm = fit_network_effects(&wp_perm, &nets_p, &s1p).unwrap();
    let mut equivariant = (fit_perm.gamma_hat.clone() - &fit_base.gamma_hat).amax() < 1e-12;
    for i in 0..5 {
        equivariant &= (fit_perm.lambda_hat[i] - fit_base.lambda_hat[perm[i]]).abs() < 1e-12;
    }

    // byte-identical reruns of simulation and benchmark
    let sim_a = simulate_world(&cfg).unwrap();
    let sim_b = simulate_world(&cfg).unwrap();
    let sim_deterministic = sim_a.output.panel == sim_b.output.panel;
    let mut smoke = BenchmarkSpec::new(
        vec![CellSpec { n: 20, horizon: 10 }],
        vec![Mechanism::Mar],
        2,
        31_415,
    );
    smoke.base.b_rank = 3;
    smoke.base.burn_in = 30;
    smoke.step1 = Step1Config::with_penalties(50.0, 50.0);
    let csv_a = run_benchmark(&smoke).to_csv();
    let csv_b = run_benchmark(&smoke).to_csv();
    let bench_deterministic = csv_a == csv_b;

    check(
        "8",
        monotone && xtb < 1e-8 && equivariant && sim_deterministic && bench_deterministic,
        format!(
            "monotone objective: {monotone}; |X'B| = {xtb:.2e} (< 1e-8); permutation equivariance: {equivariant}; byte-identical sim rerun: {sim_deterministic}; byte-identical benchmark rerun: {bench_deterministic}"
        ),
    );
}

// ---------------------------------------------------------------------------
// normality sanity check (supplement to criterion 4)
// ---------------------------------------------------------------------------

fn normal_quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(p)
}

#[test]
fn qq_straightness_sanity_check() {
    // fixed network/covariates/coefficients, noise and mask redrawn per
    // replication; node 0 must have out-neighbors so its effect is identified
    let mut cfg = SimConfig::new(50, 50, 100, 0);
    cfg.burn_in = 100;
    let world = (0..50u64)
        .find_map(|s| {
            cfg.seed = 9100 + s;
            let w = simulate_world(&cfg).ok()?;
            (w.nets.w1().row(0).iter().sum::<f64>() > 0.0).then_some(w)
        })
        .expect("a network draw with out-edges at node 0");
    let s1 = Step1Config::with_penalties(12_000.0, 12_000.0);
    let reps = 200;
    let draws: Vec<Option<f64>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(world.config.seed, &[rep]));
            let out = simulate_panel(&cfg, &world.nets, &world.params, &world.cov, &mut rng).ok()?;
            let mm = fit_logistic_missing(out.panel.mask(), &world.cov).ok()?;
            let wp = build_weighted_panel(&out.panel, &mm).ok()?;
            let fit = fit_network_effects(&wp, &world.nets, &s1).ok()?;
            Some(fit.lambda_hat[0])
        })
        .collect();
    let mut values: Vec<f64> = draws.iter().flatten().copied().collect();
    assert!(values.len() >= reps as usize - 5, "too many failed replications");
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    let quantiles: Vec<f64> =
        (0..n).map(|k| normal_quantile((k as f64 + 0.5) / n as f64)).collect();
    let mean_v = values.iter().sum::<f64>() / n as f64;
    let mean_q = quantiles.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for k in 0..n {
        let dv = values[k] - mean_v;
        let dq = quantiles[k] - mean_q;
        sxy += dv * dq;
        sxx += dv * dv;
        syy += dq * dq;
    }
    let corr = sxy / (sxx * syy).sqrt();
    check(
        "QQ sanity",
        corr > 0.99,
        format!("QQ correlation of lambda_1 over {n} replications: {corr:.4} (> 0.99)"),
    );
}

// ---------------------------------------------------------------------------
// debiasing reduces the Monte-Carlo RMSE (paired sign test)
// ---------------------------------------------------------------------------

#[test]
fn debias_sign_test() {
    let mut wins = 0usize;
    let mut total = 0usize;
    for cell in MAR_TABLE.cells.iter().chain(UNI_TABLE.cells.iter()) {
        let org = &cell.reports[3].per_rep_mse_lambda;
        let adj = &cell.reports[4].per_rep_mse_lambda;
        for (o, a) in org.iter().zip(adj) {
            total += 1;
            if a < o {
                wins += 1;
            }
        }
    }
    // one-sided binomial sign test at the 5% level via the normal
    // approximation (total is ~200 here)
    let z = (wins as f64 - 0.5 * total as f64) / (0.25 * total as f64).sqrt();
    check(
        "debias sign test",
        z > 1.645,
        format!("ADJ beats ORG on lambda MSE in {wins}/{total} replications (z = {z:.2} > 1.645)"),
    );
}

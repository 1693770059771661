//! Acceptance runner: one line per criterion with its measured values.
//!
//! `ACCEPTANCE_ONLY=1,7` restricts the run to the listed criteria and
//! `ACCEPTANCE_STRICT=1` turns any failure into a non-zero exit status.

mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use thermocal::diagnostics::{diagnose, iact, propose_burn_in, quantile_sorted, split_rhat_ess};
use thermocal::model::{discretize, discretize_with_derivatives};
use thermocal::posterior::{assemble, optimize, Curvature, GaussianTarget, LikelihoodTerms, OptimizeOptions, OptimizeReport};
use thermocal::sampler::{prior_initial_points, run_chains, ProposalKind, StepSize};
use thermocal::selection::{aic_bic, lrt, profile, ProfileCurve, PROFILE_THRESHOLD};
use thermocal::{
    run_filter, BuiltinModel, ChainSet, FilterInit, FilterOptions, Hold, Mode, Posterior, SamplerConfig,
    Target,
};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Recovery problem shared by criteria 7, 8, 10 and 11.
struct Recovery {
    model: BuiltinModel,
    posterior: Posterior,
}

fn recovery(seed: u64) -> Recovery {
    let (model, data) = m3_synthetic(2000, seed);
    let posterior = Posterior::new(Arc::new(model.network.clone()), model.space.clone(), Arc::new(data)).unwrap();
    Recovery { model, posterior }
}

const STEP: f64 = 0.3;
const WARMUP: usize = 1000;

fn second_order(iterations: usize, seed: u64) -> SamplerConfig {
    SamplerConfig {
        iterations,
        step: StepSize::Scalar(STEP),
        proposal: ProposalKind::SecondOrder,
        seed,
        warmup: WARMUP,
        ..Default::default()
    }
}

fn burn_in(set: &ChainSet, floor: usize) -> usize {
    let traces: Vec<&[f64]> = set.completed().iter().map(|c| c.log_posts.as_slice()).collect();
    propose_burn_in(&traces).max(floor)
}

// ---------------------------------------------------------------------------

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let n = 1 + case % 4;
        let hold = if case % 2 == 0 { Hold::First } else { Hold::Zero };
        let dm = random_discrete(&mut rng, n, 2, 1, 0.5, hold);
        let data = simulate_discrete(&mut rng, &dm, 300);
        let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let s0 = DMatrix::from_fn(n, n, |i, j| if i == j { rng.gen_range(0.5..2.0) } else if i < j { rng.gen_range(-0.3..0.3) } else { 0.0 });
        let oracle = kalman_oracle(&dm, &data, &x0, &(s0.transpose() * &s0));
        let init = FilterInit { x: x0, p_sqrt: s0, dx: Vec::new() };
        let run = run_filter(&dm, &data, &init, &FilterOptions { with_derivatives: false, ..Default::default() }).unwrap();
        worst = worst.max((run.loglik - oracle.loglik).abs());
    }
    let t = start.elapsed();
    outcome(worst < 1e-8 && t < Duration::from_secs(10), format!("max |dloglik| = {worst:.2e} over 50 models, {:.2} s", t.as_secs_f64()))
}

fn m3_points() -> (Posterior, Vec<Vec<f64>>) {
    let (b, data) = m3_synthetic(1000, 3);
    let post = Posterior::new(Arc::new(b.network), b.space, Arc::new(data)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let points = (0..10).map(|_| post.space.sample_prior(&mut rng, &b.nominal)).collect();
    (post, points)
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let (post, points) = m3_points();
    let (mut normwise, mut componentwise) = (0.0f64, 0.0f64);
    for theta in &points {
        let run = post.filter_at(theta, true).unwrap();
        let fd: Vec<f64> = (0..theta.len())
            .map(|i| central(|t| post.log_likelihood(t).unwrap(), theta, i, 1e-6 * theta[i].abs()))
            .collect();
        let scale = max_abs(&fd);
        for (a, b) in run.grad.iter().zip(&fd) {
            normwise = normwise.max((a - b).abs() / scale);
            componentwise = componentwise.max(rel_err(*a, *b, 1.0));
        }
    }
    let t = start.elapsed();
    outcome(
        normwise < 1e-5 && t < Duration::from_secs(30),
        format!(
            "max |g - fd| / |fd|inf = {normwise:.2e}, componentwise max = {componentwise:.2e} (10 points, 15 parameters), {:.1} s",
            t.as_secs_f64()
        ),
    )
}

fn criterion_3() -> Outcome {
    let (post, points) = m3_points();
    let (mut asym, mut worst) = (0.0f64, f64::INFINITY);
    for theta in &points {
        let h = post.filter_at(theta, true).unwrap().hess;
        asym = asym.max((&h - h.transpose()).abs().max() / h.abs().max());
        worst = worst.min(h.clone().symmetric_eigen().eigenvalues.min() / h.trace());
    }
    outcome(asym <= 1e-12 && worst > -1e-8, format!("max relative asymmetry {asym:.1e}, min eigenvalue / trace = {worst:.2e}"))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let net = random_network(&mut rng);
        let dt = rng.gen_range(0.2..2.0);
        let hold = if case % 2 == 0 { Hold::First } else { Hold::Zero };
        let indices: Vec<usize> = (0..net.theta.len()).collect();
        let dm = discretize_with_derivatives(&net.network, &net.theta, &indices, dt, hold).unwrap();
        for (i, d) in dm.partials.iter().enumerate() {
            let h = 1e-6 * net.theta[i].abs();
            let mut tp = net.theta.clone();
            let mut tm = net.theta.clone();
            tp[i] += h;
            tm[i] -= h;
            let p = discretize(&net.network, &tp, dt, hold).unwrap();
            let m = discretize(&net.network, &tm, dt, hold).unwrap();
            for (a, pp, mm) in [(&d.ad, &p.ad, &m.ad), (&d.bd0, &p.bd0, &m.bd0), (&d.bd1, &p.bd1, &m.bd1), (&d.c, &p.c, &m.c), (&d.sw, &p.sw, &m.sw), (&d.sv, &p.sv, &m.sv)] {
                worst = worst.max(mat_rel_err(a, &((pp - mm) / (2.0 * h)), 1e-3));
            }
        }
    }
    outcome(worst < 1e-6, format!("max relative matrix error {worst:.2e} over 50 networks"))
}

fn criterion_5() -> Outcome {
    // gradient of the real log-posterior in the unconstrained space
    let (post, points) = m3_points();
    let mut grad_err = 0.0f64;
    for theta in points.iter().take(5) {
        let eta = post.space.to_unconstrained(theta).unwrap();
        let e = post.evaluate(&eta).unwrap();
        for i in 0..eta.len() {
            let fd = central(|x| post.value(x).unwrap(), &eta, i, 1e-4);
            grad_err = grad_err.max(rel_err(e.grad[i], fd, 1.0));
        }
    }
    // exact curvature through the same mapping, on a likelihood with a closed-form Hessian
    let space = post.space.clone();
    let b = thermocal::m3();
    let d = space.n_free();
    let corr = DMatrix::from_fn(d, d, |i, j| 0.4f64.powi((i as i32 - j as i32).abs()));
    let precision = corr.try_inverse().unwrap();
    let mean = DVector::from_column_slice(&b.nominal);
    let scale = mean.map(|m| 0.3 * m.abs());
    let terms = |theta: &[f64]| {
        let z = (DVector::from_column_slice(theta) - &mean).component_div(&scale);
        let pz = &precision * &z;
        let dinv = DMatrix::from_diagonal(&scale.map(|s| 1.0 / s));
        LikelihoodTerms { loglik: -0.5 * z.dot(&pz), grad: -(&dinv * pz), hess: &dinv * &precision * &dinv, pointwise: Vec::new() }
    };
    let density = |eta: &[f64]| assemble(&space, Mode::Posterior, Curvature::Full, eta, terms(&space.from_unconstrained(eta)));
    let mut hess_err = 0.0f64;
    for theta in &points {
        let eta = space.to_unconstrained(theta).unwrap();
        let e = density(&eta);
        for i in 0..d {
            hess_err = hess_err.max(rel_err(e.grad[i], central(|x| density(x).log_density, &eta, i, 1e-5), 1.0));
            for j in 0..d {
                let fd = -central(|x| density(x).grad[j], &eta, i, 1e-5);
                hess_err = hess_err.max(rel_err(e.hess[(i, j)], fd, 1.0));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut round = 0.0f64;
    for _ in 0..1000 {
        let theta = space.sample_prior(&mut rng, &b.nominal);
        let back = space.from_unconstrained(&space.to_unconstrained(&theta).unwrap());
        for (a, t) in back.iter().zip(&theta) {
            round = round.max(rel_err(*a, *t, 1e-300));
        }
    }
    outcome(
        grad_err < 1e-5 && hess_err < 1e-5 && round < 1e-12,
        format!("posterior gradient {grad_err:.2e}, exact-target gradient/Hessian {hess_err:.2e}, round trip {round:.1e}"),
    )
}

/// Asymptotic Kolmogorov-Smirnov p-value of a sample against a normal marginal.
fn ks_normal(sample: &mut [f64], mean: f64, sd: f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    let dist = Normal::new(mean, sd).unwrap();
    let d = sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = dist.cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let p: f64 = (1..=100).map(|k| 2.0 * (-1.0f64).powi(k - 1) * (-2.0 * (k as f64 * lambda).powi(2)).exp()).sum();
    p.clamp(0.0, 1.0)
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let mean = DVector::from_vec(vec![1.0, -2.0, 0.5]);
    let sd = [1.0, 0.5, 2.0];
    let corr = DMatrix::from_row_slice(3, 3, &[1.0, 0.6, -0.3, 0.6, 1.0, 0.2, -0.3, 0.2, 1.0]);
    let cov = DMatrix::from_fn(3, 3, |i, j| corr[(i, j)] * sd[i] * sd[j]);
    let target = GaussianTarget::new(mean.clone(), &cov).unwrap();
    let burn = 1000;
    let (mut ks_pass, mut moments_pass) = (0, 0);
    let mut first = String::new();
    let mut first_ok = false;
    for seed in 1..=20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let initial: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|j| mean[j] + 3.0 * sd[j] * rng.gen_range(-1.0..1.0)).collect()).collect();
        let config = SamplerConfig { iterations: 10_000 + burn, step: StepSize::Scalar(1.0), seed, ..Default::default() };
        let set = run_chains(&target, &config, &initial).unwrap();
        let mut ok_moments = true;
        let mut max_rhat = 0.0f64;
        let mut ks_ok = true;
        for j in 0..3 {
            let series = set.series(j, burn);
            let re = split_rhat_ess(&series);
            max_rhat = max_rhat.max(re.rhat);
            let pooled: Vec<f64> = series.concat();
            let m = pooled.iter().sum::<f64>() / pooled.len() as f64;
            let mcse = sd[j] / re.ess.sqrt();
            ok_moments &= (m - mean[j]).abs() < 3.0 * mcse;
            let thin = series.iter().map(|s| iact(s)).fold(1.0f64, f64::max).ceil() as usize;
            let mut thinned: Vec<f64> = series.iter().flat_map(|s| s.iter().step_by(thin).copied()).collect();
            ks_ok &= ks_normal(&mut thinned, mean[j], sd[j]) > 0.01;
        }
        ok_moments &= max_rhat < 1.05;
        moments_pass += ok_moments as usize;
        ks_pass += ks_ok as usize;
        if seed == 1 {
            first_ok = ok_moments;
            first = format!("max split-R̂ {max_rhat:.4}");
        }
    }
    let t = start.elapsed();
    outcome(
        first_ok && ks_pass >= 18 && t < Duration::from_secs(60),
        format!(
            "seed 1: means within 3 MCSE and {first}: {first_ok}; moments pass in {moments_pass}/20 seeds; KS p > 0.01 in {ks_pass}/20 seeds; {:.1} s",
            t.as_secs_f64()
        ),
    )
}

struct SeedResult {
    max_rhat: f64,
    min_ess: f64,
    rhat: Vec<f64>,
    ess: Vec<f64>,
    inside: usize,
    burn: usize,
    accept: f64,
}

fn recovery_run(seed: u64) -> SeedResult {
    let r = recovery(seed);
    let space = &r.model.space;
    let initial = prior_initial_points(space, &r.model.nominal, 4, seed).unwrap();
    let set = run_chains(&r.posterior, &second_order(8000, seed), &initial).unwrap();
    let burn = burn_in(&set, WARMUP);
    let report = diagnose(&set, &space.names(), burn);
    let draws = set.pooled(burn, 1);
    let inside = (0..space.len())
        .filter(|&j| {
            let mut v: Vec<f64> = draws.iter().map(|e| space.from_unconstrained(e)[j]).collect();
            v.sort_by(f64::total_cmp);
            let truth = r.model.nominal[j];
            quantile_sorted(&v, 0.025) <= truth && truth <= quantile_sorted(&v, 0.975)
        })
        .count();
    let rhat: Vec<f64> = report.parameters.iter().map(|p| p.rhat).collect();
    let ess: Vec<f64> = report.parameters.iter().map(|p| p.ess).collect();
    SeedResult {
        max_rhat: rhat.iter().copied().fold(0.0, f64::max),
        min_ess: ess.iter().copied().fold(f64::INFINITY, f64::min),
        rhat,
        ess,
        inside,
        burn,
        accept: report.accept_rates.iter().sum::<f64>() / report.accept_rates.len() as f64,
    }
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let seeds = [1u64, 2, 3, 4, 5];
    let results: Vec<SeedResult> = seeds
        .iter()
        .map(|&s| {
            let r = recovery_run(s);
            println!(
                "    seed {s}: burn-in {}, acceptance {:.3}, max R̂ {:.3}, min ESS {:.1}, inside {}/15",
                r.burn, r.accept, r.max_rhat, r.min_ess, r.inside
            );
            r
        })
        .collect();
    let n = results.len() as f64;
    let d = results[0].rhat.len();
    let mean_rhat: Vec<f64> = (0..d).map(|j| results.iter().map(|r| r.rhat[j]).sum::<f64>() / n).collect();
    let mean_ess: Vec<f64> = (0..d).map(|j| results.iter().map(|r| r.ess[j]).sum::<f64>() / n).collect();
    let mean_inside = results.iter().map(|r| r.inside as f64).sum::<f64>() / n;
    let worst_rhat = mean_rhat.iter().copied().fold(0.0, f64::max);
    let worst_ess = mean_ess.iter().copied().fold(f64::INFINITY, f64::min);
    let t = start.elapsed();
    let passed = worst_rhat < 1.1 && worst_ess > 40.0 && mean_inside >= 12.0 && t < Duration::from_secs(900);
    outcome(
        passed,
        format!(
            "seed-averaged: max R̂ {worst_rhat:.3}, min ESS {worst_ess:.1} (> 40), inside {mean_inside:.1}/15; {:.1} min",
            t.as_secs_f64() / 60.0
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

fn median_iact(set: &ChainSet) -> f64 {
    median(
        (0..set.dim)
            .map(|j| {
                let s = set.series(j, 0);
                s.iter().map(|c| iact(c)).sum::<f64>() / s.len() as f64
            })
            .collect(),
    )
}

fn mode_of(target: &dyn Target, start: &[f64]) -> OptimizeReport {
    optimize(target, start, &OptimizeOptions::default()).unwrap()
}

fn criterion_8() -> Outcome {
    let r = recovery(1);
    let post = &r.posterior;
    let nominal = r.model.space.to_unconstrained(&r.model.nominal).unwrap();
    let mode = mode_of(post, &nominal);
    let initial = vec![mode.eta.clone(); 4];
    let iterations = 2000;
    let newton = SamplerConfig { warmup: 0, ..second_order(iterations, 8) };
    let a = run_chains(post, &newton, &initial).unwrap();
    let d = mode.eta.len() as f64;
    let cov = thermocal::linalg::regularize_spd(&mode.evaluation.hess).try_inverse().unwrap() * (2.38 * 2.38 / d);
    let walk = SamplerConfig {
        iterations,
        step: StepSize::Scalar(1.0),
        proposal: ProposalKind::RandomWalk(cov),
        seed: 8,
        ..Default::default()
    };
    let b = run_chains(post, &walk, &initial).unwrap();
    let (ia, ib) = (median_iact(&a), median_iact(&b));
    outcome(
        ia < ib,
        format!(
            "median IACT second-order {ia:.1} vs random walk {ib:.1} at {} / {} posterior evaluations",
            a.total_evaluations(),
            b.total_evaluations()
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut ok = true;
    let (aic, bic) = aic_bic(-100.0, 3, 100).unwrap();
    ok &= aic == 206.0 && (bic - (200.0 + 3.0 * 100f64.ln())).abs() < 1e-12 && (bic - 213.8155).abs() < 1e-4;
    let (a0, b0) = aic_bic(-100.0, 0, 100).unwrap();
    ok &= a0 == 200.0 && b0 == 200.0;
    let eq = lrt(-50.0, -50.0, 2).unwrap();
    ok &= eq.statistic == 0.0 && eq.p_value == 1.0;
    let five = lrt(0.0, 3.8415 / 2.0, 1).unwrap();
    ok &= (five.p_value - 0.05).abs() < 1e-4;
    let far = lrt(0.0, 50.0, 3).unwrap();
    ok &= far.p_value < 1e-15;
    let chi = statrs::distribution::ChiSquared::new(1.0).unwrap().inverse_cdf(0.95);
    ok &= ((-0.5 * chi * 100.0).round() / 100.0 - PROFILE_THRESHOLD).abs() < 1e-12;
    outcome(
        ok,
        format!(
            "AIC {aic}, BIC {bic:.4}, LRT(equal) p = {}, LRT(3.8415, 1) p = {:.5}, -chi2/2 = {:.4}",
            eq.p_value,
            five.p_value,
            -0.5 * chi
        ),
    )
}

/// Interval of the profile above the threshold in physical units. An end
/// without a crossing is taken at the grid boundary.
fn sigma_interval(curve: &ProfileCurve) -> (f64, f64, usize) {
    let best = curve.grid[curve.values.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0];
    let crossings = curve.crossings();
    let lo = crossings.iter().copied().filter(|c| *c < best).fold(curve.grid[0], f64::max);
    let hi = crossings.iter().copied().filter(|c| *c > best).fold(*curve.grid.last().unwrap(), f64::min);
    let sides = crossings.iter().any(|c| *c < best) as usize + crossings.iter().any(|c| *c > best) as usize;
    (lo.exp(), hi.exp(), sides)
}

fn criterion_10() -> Outcome {
    let (post, theta) = weak_noise_problem(10);
    let space = post.space.clone();
    let index = space.free_names().iter().position(|n| n == "s_b").unwrap();
    let start = space.to_unconstrained(&theta).unwrap();
    let grid: Vec<f64> = (0..=40).map(|k| (1e-4f64).ln() + k as f64 * (1e5f64).ln() / 40.0).collect();
    let opts = OptimizeOptions::default();
    let lik = post.clone().with_mode(Mode::Likelihood);
    let map = post.with_mode(Mode::Map);
    let lik_curve = profile(&lik, index, &grid, &mode_of(&lik, &start), &opts).unwrap();
    let map_curve = profile(&map, index, &grid, &mode_of(&map, &start), &opts).unwrap();
    let (l_lo, l_hi, _) = sigma_interval(&lik_curve);
    let (p_lo, p_hi, sides) = sigma_interval(&map_curve);
    let decades = (l_hi / l_lo).log10();
    let ratio = (l_hi - l_lo) / (p_hi - p_lo);
    outcome(
        decades >= 2.0 && sides == 2 && ratio > 5.0,
        format!(
            "s_b: likelihood within 1.92 on [{l_lo:.1e}, {l_hi:.3}] ({decades:.1} decades), posterior on [{p_lo:.4}, {p_hi:.4}] \
             (crossed on {sides} sides), width ratio {ratio:.1}"
        ),
    )
}

fn distinct_optima(values: &[f64], gap: f64) -> usize {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return 0;
    }
    1 + v.windows(2).filter(|w| w[1] - w[0] > gap).count()
}

fn criterion_11() -> Outcome {
    let r = recovery(1);
    let space = &r.model.space;
    let starts = prior_initial_points(space, &r.model.nominal, 6, 11).unwrap();
    let lik = r.posterior.clone().with_mode(Mode::Likelihood);
    let optima: Vec<f64> = starts
        .iter()
        .map(|s| optimize(&lik, s, &OptimizeOptions::default()).map(|o| o.evaluation.log_lik).unwrap_or(f64::NAN))
        .collect();
    let distinct = distinct_optima(&optima, 2.0);
    let set = run_chains(&r.posterior, &second_order(5500, 11), &starts).unwrap();
    let burn = burn_in(&set, WARMUP);
    let report = diagnose(&set, &space.names(), burn);
    let max_rhat = report.parameters.iter().map(|p| p.rhat).fold(0.0, f64::max);
    let formatted: Vec<String> = optima.iter().map(|v| format!("{v:.1}")).collect();
    outcome(
        distinct >= 2 && max_rhat < 1.1 && report.failed_chains == 0,
        format!("ML optima [{}] -> {distinct} distinct; 6 MH chains max R̂ {max_rhat:.3} (burn-in {burn})", formatted.join(", ")),
    )
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let criteria: [(usize, &str, fn() -> Outcome); 11] = [
        (1, "square-root filter matches covariance filter", criterion_1),
        (2, "analytic gradient matches finite differences", criterion_2),
        (3, "curvature symmetric and positive semidefinite", criterion_3),
        (4, "discretization derivatives", criterion_4),
        (5, "transform and Jacobian", criterion_5),
        (6, "sampler on a Gaussian target", criterion_6),
        (7, "parameter recovery", criterion_7),
        (8, "mixing: second-order vs random walk", criterion_8),
        (9, "model comparison formulas", criterion_9),
        (10, "prior regularization of a weak noise parameter", criterion_10),
        (11, "robustness to initial values", criterion_11),
    ];
    let mut failures = 0;
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        failures += !o.passed as usize;
        println!(
            "criterion {id:>2} [{}] {name}: {} ({:.1} s)",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {failures} failing criteria");
    if strict && failures > 0 {
        std::process::exit(1);
    }
}

use std::path::PathBuf;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thermocal::diagnostics::{diagnose, iact, residual_analysis, default_max_lag, DiagnosisReport};
use thermocal::linalg::regularize_spd;
use thermocal::posterior::{multi_start, optimize, OptimizeReport};
use thermocal::sampler::{prior_initial_points, run_chains, ChainSet, ProposalKind, SamplerConfig};
use thermocal::selection::{
    credible_interval, physical_summary, pointwise_log_densities, posterior_predictive, profile, waic, ComparisonTable,
    DataTag, ModelCriteria,
};
use thermocal::synth::{generate, Scenario};
use thermocal::{Dataset, Error, Posterior, Result};

use crate::config::{load_records, InitChoice, Loaded, Problem, ProposalChoice};
use crate::output::{num, read_traces, write_trace, OutDir};

/// Everything a sub-command needs.
pub struct Context {
    pub loaded: Loaded,
    pub problem: Problem,
    pub out: OutDir,
    pub seed: u64,
    pub chains: usize,
}

impl Context {
    fn burn_in(&self) -> usize {
        self.loaded.config.sampler.burn_in.unwrap_or(0)
    }

    fn posterior(&self, data: &Dataset) -> Result<Posterior> {
        self.problem.posterior(&self.loaded, Arc::new(data.clone()))
    }

    /// Best optimum of the target from the nominal point and `starts` prior draws.
    fn best_optimum(&self, target: &Posterior, starts: usize) -> Result<OptimizeReport> {
        let opts = self.loaded.config.optimizer.options();
        let eta0 = self.problem.space.to_unconstrained(&self.problem.nominal)?;
        let mut best = optimize(target, &eta0, &opts);
        if starts > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            for s in multi_start(target, &self.problem.space, &self.problem.nominal, starts, &mut rng, &opts) {
                if let Ok(r) = s.result {
                    if best.as_ref().map_or(true, |b| r.evaluation.log_density > b.evaluation.log_density) {
                        best = Ok(r);
                    }
                }
            }
        }
        best
    }
}

fn report_line(text: &mut String, line: String) {
    println!("{line}");
    text.push_str(&line);
    text.push('\n');
}

pub fn synth(ctx: &mut Context) -> Result<()> {
    let s = ctx
        .loaded
        .config
        .synth
        .clone()
        .ok_or_else(|| Error::Config("synth needs a [synth] section".into()))?;
    let scenario = Scenario {
        theta: ctx.problem.nominal.clone(),
        signals: s.signals(),
        n_steps: s.n_steps,
        dt: s.dt,
        hold: ctx.loaded.config.filter.hold,
        identification_fraction: s.identification_fraction,
        seed: ctx.seed,
    };
    let syn = generate(ctx.problem.network.as_ref(), &scenario)?;
    syn.full.write_csv(ctx.out.file("full.csv"))?;
    syn.identification.write_csv(ctx.out.file("identification.csv"))?;
    syn.validation.write_csv(ctx.out.file("validation.csv"))?;
    let rows: Vec<Vec<String>> = ctx
        .problem
        .space
        .names()
        .into_iter()
        .zip(&syn.theta)
        .map(|(n, v)| vec![n, num(*v)])
        .collect();
    ctx.out.write_table("truth.csv", &["parameter", "value"], &rows)?;
    println!(
        "synthetic {} data: {} identification + {} validation samples written to {}",
        ctx.problem.name,
        syn.identification.len(),
        syn.validation.len(),
        ctx.out.path.display()
    );
    Ok(())
}

pub fn calibrate(ctx: &mut Context) -> Result<()> {
    let records = load_records(&ctx.loaded, &ctx.problem)?;
    let post = ctx.posterior(&records.identification)?;
    let space = &ctx.problem.space.clone();
    let sc = ctx.loaded.config.sampler.clone();
    let mode = ctx.best_optimum(&post, 0)?;
    let proposal = match sc.proposal {
        ProposalChoice::SecondOrder => ProposalKind::SecondOrder,
        ProposalChoice::RandomWalk => {
            let h = regularize_spd(&mode.evaluation.hess);
            let inv = h.try_inverse().ok_or_else(|| Error::Numerical("curvature at the mode is singular".into()))?;
            ProposalKind::RandomWalk(inv * sc.random_walk_scale)
        }
    };
    let initial = match sc.init {
        InitChoice::Prior => prior_initial_points(space, &ctx.problem.nominal, ctx.chains, ctx.seed)?,
        InitChoice::Nominal => vec![space.to_unconstrained(&ctx.problem.nominal)?; ctx.chains],
    };
    let config = SamplerConfig { iterations: sc.iterations, step: sc.step.to_step(), proposal, seed: ctx.seed, warmup: sc.warmup, ..Default::default() };
    let set = run_chains(&post, &config, &initial)?;
    for (i, c) in set.chains.iter().enumerate() {
        write_trace(&mut ctx.out, i, c, space)?;
        if let Some(f) = &c.failure {
            eprintln!("warning: chain {i} failed: {f}");
        }
    }
    if set.completed().is_empty() {
        return Err(Error::Numerical("every chain failed".into()));
    }
    let report = diagnose(&set, &space.free_names(), ctx.burn_in());
    write_diagnosis(ctx, &report)?;
    write_summary(ctx, &set, &report, &mode)?;

    let theta_mode = space.from_unconstrained(&mode.eta);
    write_residuals(ctx, &post, &theta_mode)?;
    Ok(())
}

pub fn diagnose_command(ctx: &mut Context) -> Result<()> {
    let set = read_traces(&ctx.out.path, &ctx.problem.space)?;
    let report = diagnose(&set, &ctx.problem.space.free_names(), ctx.burn_in());
    write_diagnosis(ctx, &report)
}

fn write_diagnosis(ctx: &mut Context, r: &DiagnosisReport) -> Result<()> {
    let mut text = String::new();
    report_line(
        &mut text,
        format!("chains: {} completed, {} failed; burn-in {}; {} draws retained per chain", r.chains, r.failed_chains, r.burn_in, r.retained_per_chain),
    );
    if r.proposed_burn_in != r.burn_in {
        report_line(&mut text, format!("proposed burn-in from the log-posterior traces: {} (set sampler.burn_in to apply)", r.proposed_burn_in));
    }
    if r.reduced_power {
        report_line(&mut text, "warning: single chain, split-R̂ has reduced power".into());
    }
    let rates: Vec<String> = r.accept_rates.iter().map(|a| format!("{a:.3}")).collect();
    report_line(&mut text, format!("accept rates: {}", rates.join(" ")));
    report_line(&mut text, format!("{:<14} {:>8} {:>10} {:>10} {:>10}  pass", "parameter", "R̂", "ESS", "IACT min", "IACT max"));
    let mut rows = Vec::new();
    for p in &r.parameters {
        report_line(
            &mut text,
            format!(
                "{:<14} {:>8.4} {:>10.1} {:>10.2} {:>10.2}  {}",
                p.name,
                p.rhat,
                p.ess,
                p.iact_min,
                p.iact_max,
                if p.rhat_pass && p.ess_pass { "yes" } else { "no" }
            ),
        );
        rows.push(vec![
            p.name.clone(),
            num(p.rhat),
            num(p.ess),
            num(p.iact_min),
            num(p.iact_max),
            p.rhat_pass.to_string(),
            p.ess_pass.to_string(),
        ]);
    }
    report_line(&mut text, format!("converged (R̂ < 1.1, ESS > {}): {}", r.ess_threshold(), r.passed()));
    ctx.out.write_table("diagnosis.csv", &["parameter", "rhat", "ess", "iact_min", "iact_max", "rhat_pass", "ess_pass"], &rows)?;
    ctx.out.write_text("diagnosis.txt", &text)
}

fn write_summary(ctx: &mut Context, set: &ChainSet, report: &DiagnosisReport, mode: &OptimizeReport) -> Result<()> {
    let space = &ctx.problem.space;
    let draws: Vec<Vec<f64>> = set.pooled(report.burn_in, 1).iter().map(|e| space.from_unconstrained(e)).collect();
    if draws.is_empty() {
        return Err(Error::Config("burn-in leaves no draws".into()));
    }
    let theta_mode = space.from_unconstrained(&mode.eta);
    let mut rows = Vec::new();
    for (j, name) in space.names().iter().enumerate() {
        let values: Vec<f64> = draws.iter().map(|t| t[j]).collect();
        let ci = credible_interval(&values);
        let diag = report.parameters.iter().find(|p| &p.name == name);
        rows.push(vec![
            name.clone(),
            num(theta_mode[j]),
            num(ci.mean),
            num(ci.lower),
            num(ci.median),
            num(ci.upper),
            diag.map_or(String::new(), |d| num(d.iact_min)),
            diag.map_or(String::new(), |d| num(d.iact_max)),
            diag.map_or(String::new(), |d| num(d.rhat)),
            diag.map_or(String::new(), |d| num(d.ess)),
        ]);
    }
    ctx.out.write_table(
        "summary.csv",
        &["parameter", "mode", "mean", "q2.5", "q50", "q97.5", "iact_min", "iact_max", "rhat", "ess"],
        &rows,
    )?;

    let combos = ctx.problem.combinations(&ctx.loaded)?;
    let phys = physical_summary(ctx.problem.network.as_ref(), &draws, &combos)?;
    let n_tau = phys.time_constants.first().map_or(0, Vec::len);
    let mut rows = Vec::new();
    for k in 0..n_tau {
        let hours: Vec<f64> = phys.time_constants.iter().map(|t| t[k] / 3600.0).collect();
        let ci = credible_interval(&hours);
        rows.push(vec![format!("tau_{}", k + 1), num(ci.mean), num(ci.lower), num(ci.median), num(ci.upper)]);
    }
    for (name, values) in &phys.combinations {
        let ci = credible_interval(values);
        rows.push(vec![name.clone(), num(ci.mean), num(ci.lower), num(ci.median), num(ci.upper)]);
    }
    if phys.complex_draws > 0 {
        eprintln!("warning: {} draws have complex eigenvalues; their time constants use 1/|λ|", phys.complex_draws);
    }
    ctx.out.write_table("derived.csv", &["quantity", "mean", "q2.5", "q50", "q97.5"], &rows)?;
    println!("posterior summary written to {}", ctx.out.path.join("summary.csv").display());
    Ok(())
}

fn write_residuals(ctx: &mut Context, post: &Posterior, theta: &[f64]) -> Result<()> {
    let run = post.filter_at(theta, false)?;
    let data = &post.data;
    let inputs: Vec<(String, Vec<f64>)> =
        data.input_names().iter().enumerate().map(|(j, n)| (n.clone(), data.input_column(j))).collect();
    let mut text = String::new();
    let mut acf_rows = Vec::new();
    let mut ccf_rows = Vec::new();
    let mut cp_rows = Vec::new();
    for (j, out_name) in data.output_names().iter().enumerate() {
        let e = run.residual_series(j);
        let r = residual_analysis(&e, &inputs, default_max_lag(e.len()));
        for (lag, v) in r.acf.iter().enumerate() {
            acf_rows.push(vec![out_name.clone(), lag.to_string(), num(*v), num(r.band)]);
        }
        for c in &r.ccf {
            for (lag, v) in c.values.iter().enumerate() {
                ccf_rows.push(vec![out_name.clone(), c.input.clone(), lag.to_string(), num(*v), num(r.band)]);
            }
        }
        for (k, (f, v)) in r.cp_frequency.iter().zip(&r.cp).enumerate() {
            cp_rows.push(vec![out_name.clone(), num(*f), num(*v), num(r.cp_reference(k)), num(r.cp_band)]);
        }
        report_line(
            &mut text,
            format!(
                "residuals of {out_name}: ACF {:.1}% and CP {:.1}% of lags outside the 95% band; white: {}",
                100.0 * r.acf_out_of_band,
                100.0 * r.cp_out_of_band,
                r.is_white()
            ),
        );
        for c in &r.ccf {
            report_line(&mut text, format!("  CCF with {}: {:.1}% outside", c.input, 100.0 * c.out_of_band));
        }
        if r.low_power {
            report_line(&mut text, "  warning: fewer than 30 residuals, low power".into());
        }
        if r.degenerate {
            report_line(&mut text, "  warning: residuals have zero variance".into());
        }
    }
    ctx.out.write_table("residual_acf.csv", &["output", "lag", "value", "band"], &acf_rows)?;
    ctx.out.write_table("residual_ccf.csv", &["output", "input", "lag", "value", "band"], &ccf_rows)?;
    ctx.out.write_table("residual_cp.csv", &["output", "frequency", "value", "reference", "band"], &cp_rows)?;
    ctx.out.write_text("residuals.txt", &text)
}

pub fn ml(ctx: &mut Context) -> Result<()> {
    let records = load_records(&ctx.loaded, &ctx.problem)?;
    let oc = ctx.loaded.config.optimizer.clone();
    let post = ctx.posterior(&records.identification)?.with_mode(oc.objective.mode());
    let space = &ctx.problem.space;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let results = multi_start(&post, space, &ctx.problem.nominal, oc.starts.max(1), &mut rng, &oc.options());
    let names = space.names();
    let mut header: Vec<&str> = vec!["start", "loglik", "objective", "iterations", "evaluations", "grad_norm", "stop"];
    header.extend(names.iter().map(String::as_str));
    let mut rows = Vec::new();
    let mut text = String::new();
    report_line(&mut text, format!("{:<6} {:>14} {:>14} {:>6} {:>12}  stop", "start", "loglik", "objective", "iter", "|g|"));
    for (i, s) in results.iter().enumerate() {
        match &s.result {
            Ok(r) => {
                let theta = space.from_unconstrained(&r.eta);
                report_line(
                    &mut text,
                    format!(
                        "{:<6} {:>14.4} {:>14.4} {:>6} {:>12.3e}  {:?}",
                        i, r.evaluation.log_lik, r.evaluation.log_density, r.iterations, r.grad_norm, r.reason
                    ),
                );
                let mut row = vec![
                    i.to_string(),
                    num(r.evaluation.log_lik),
                    num(r.evaluation.log_density),
                    r.iterations.to_string(),
                    r.evaluations.to_string(),
                    num(r.grad_norm),
                    format!("{:?}", r.reason).to_lowercase(),
                ];
                row.extend(theta.iter().map(|v| num(*v)));
                rows.push(row);
            }
            Err(e) => {
                report_line(&mut text, format!("{i:<6} failed: {e}"));
                let mut row = vec![i.to_string(), "NaN".into(), "NaN".into(), "0".into(), "0".into(), "NaN".into(), "failed".into()];
                row.extend(names.iter().map(|_| "NaN".to_string()));
                rows.push(row);
            }
        }
    }
    let ok: Vec<&OptimizeReport> = results.iter().filter_map(|s| s.result.as_ref().ok()).collect();
    if ok.is_empty() {
        return Err(Error::Numerical("every optimization start failed".into()));
    }
    let best = ok.iter().map(|r| r.evaluation.log_density).fold(f64::NEG_INFINITY, f64::max);
    let distinct = distinct_optima(&ok.iter().map(|r| r.evaluation.log_density).collect::<Vec<_>>(), 2.0);
    report_line(&mut text, format!("best objective {best:.4}; {distinct} distinct optima (objective gap > 2)"));
    ctx.out.write_table("ml_starts.csv", &header, &rows)?;
    ctx.out.write_text("ml.txt", &text)
}

/// Number of clusters among `values` separated by more than `gap`.
pub fn distinct_optima(values: &[f64], gap: f64) -> usize {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return 0;
    }
    1 + v.windows(2).filter(|w| w[1] - w[0] > gap).count()
}

fn thinned_thetas(set: &ChainSet, space: &thermocal::ParameterSpace, burn_in: usize, thin: usize, max: usize) -> Vec<Vec<f64>> {
    let mut draws = set.pooled(burn_in, thin);
    if draws.len() > max && max > 0 {
        let stride = draws.len().div_ceil(max);
        draws = draws.into_iter().step_by(stride).collect();
    }
    draws.iter().map(|e| space.from_unconstrained(e)).collect()
}

fn default_thin(set: &ChainSet, burn_in: usize) -> usize {
    let mut worst: f64 = 1.0;
    for j in 0..set.dim {
        for s in set.series(j, burn_in) {
            let t = iact(&s);
            if t.is_finite() {
                worst = worst.max(t);
            }
        }
    }
    worst.ceil() as usize
}

pub fn compare(ctx: &mut Context) -> Result<()> {
    let section = ctx
        .loaded
        .config
        .compare
        .clone()
        .ok_or_else(|| Error::Config("compare needs a [compare] section".into()))?;
    let mut table = ComparisonTable::default();
    for m in &section.models {
        let loaded = Loaded::from_path(&ctx.loaded.resolve(&m.config))?;
        let problem = loaded.build()?;
        let records = load_records(&loaded, &problem)?;
        let sub = Context { loaded, problem, out: OutDir { path: ctx.out.path.clone(), written: Vec::new() }, seed: ctx.seed, chains: ctx.chains };
        let post = sub.posterior(&records.identification)?.with_mode(thermocal::Mode::Likelihood);
        let best = sub.best_optimum(&post, sub.loaded.config.optimizer.starts)?;
        let theta = sub.problem.space.from_unconstrained(&best.eta);
        let n_params = sub.problem.space.n_free();
        let draws = match &m.traces {
            Some(dir) => {
                let set = read_traces(&ctx.loaded.resolve(dir), &sub.problem.space)?;
                let burn = sub.burn_in();
                Some(thinned_thetas(&set, &sub.problem.space, burn, 1, section.waic_draws))
            }
            None => None,
        };
        let mut sets = vec![(DataTag::Identification, post)];
        if let Some(v) = &records.validation {
            let vp = sets[0].1.with_data(Arc::new(v.clone()))?;
            sets.push((DataTag::Validation, vp));
        }
        for (tag, p) in &sets {
            let loglik = p.log_likelihood(&theta)?;
            let w = match &draws {
                Some(d) => Some(waic(&pointwise_log_densities(p, d)?, section.waic_form)?),
                None => None,
            };
            table.rows.push(ModelCriteria::new(&m.name, *tag, loglik, n_params, p.data.len(), w)?);
        }
    }
    for [small, large] in &section.nested {
        for tag in [DataTag::Identification, DataTag::Validation] {
            if table.rows.iter().any(|r| r.data == tag && &r.model == small) {
                table.add_lrt(small, large, tag)?;
            }
        }
    }
    let text = table.render();
    print!("{text}");
    ctx.out.write_text("comparison.txt", &text)?;
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            vec![
                r.model.clone(),
                r.data.as_str().into(),
                r.n_params.to_string(),
                r.n_samples.to_string(),
                num(r.loglik),
                num(r.aic),
                num(r.bic),
                r.waic.map_or(String::new(), num),
            ]
        })
        .collect();
    ctx.out.write_table("comparison.csv", &["model", "data", "n_params", "n_samples", "loglik", "aic", "bic", "waic"], &rows)?;
    let rows: Vec<Vec<String>> = table
        .lrt
        .iter()
        .map(|t| {
            vec![
                t.small.clone(),
                t.large.clone(),
                t.data.as_str().into(),
                t.df.to_string(),
                num(t.result.statistic),
                num(t.result.p_value),
                t.result.clamped.to_string(),
            ]
        })
        .collect();
    ctx.out.write_table("lrt.csv", &["small", "large", "data", "df", "statistic", "p_value", "clamped"], &rows)
}

pub fn profile_command(ctx: &mut Context) -> Result<()> {
    let section = ctx
        .loaded
        .config
        .profile
        .clone()
        .ok_or_else(|| Error::Config("profile needs a [profile] section".into()))?;
    let records = load_records(&ctx.loaded, &ctx.problem)?;
    let space = &ctx.problem.space;
    let full_index = space
        .index_of(&section.parameter)
        .ok_or_else(|| Error::Config(format!("unknown parameter `{}`", section.parameter)))?;
    let index = space
        .free_names()
        .iter()
        .position(|n| *n == section.parameter)
        .ok_or_else(|| Error::Config(format!("parameter `{}` is fixed", section.parameter)))?;
    let transform = space.params()[full_index].transform;
    let grid_theta = section.grid()?;
    let grid: Vec<f64> = grid_theta
        .iter()
        .map(|&t| Ok(transform.to_unconstrained(&section.parameter, t)?.expect("free parameter")))
        .collect::<Result<_>>()?;
    let mut text = String::new();
    for objective in &section.objectives {
        let post = ctx.posterior(&records.identification)?.with_mode(objective.mode());
        let reference = ctx.best_optimum(&post, ctx.loaded.config.optimizer.starts)?;
        let curve = profile(&post, index, &grid, &reference, &ctx.loaded.config.optimizer.options())?;
        let offsets = curve.offsets();
        let rows: Vec<Vec<String>> = (0..curve.grid.len())
            .map(|i| {
                vec![
                    num(transform.from_unconstrained(curve.grid[i])),
                    num(curve.grid[i]),
                    num(curve.values[i]),
                    num(offsets[i]),
                    num(curve.threshold),
                    curve.flagged[i].to_string(),
                ]
            })
            .collect();
        let name = format!("profile_{}_{}.csv", section.parameter, objective.as_str());
        ctx.out.write_table(&name, &["value", "eta", "objective", "offset", "threshold", "flagged"], &rows)?;
        let interval = match curve.interval() {
            Some((lo, hi)) => format!(
                "[{:.4e}, {:.4e}]",
                transform.from_unconstrained(lo),
                transform.from_unconstrained(hi)
            ),
            None => "empty".into(),
        };
        report_line(
            &mut text,
            format!(
                "{} profile of {}: reference {:.4}, 95% region on the grid {}{}",
                objective.as_str(),
                section.parameter,
                curve.reference,
                interval,
                if curve.reference_improved { " (a grid point improved on the reference optimum)" } else { "" }
            ),
        );
        let flagged = curve.flagged.iter().filter(|f| **f).count();
        if flagged > 0 {
            report_line(&mut text, format!("  {flagged} grid points did not converge"));
        }
    }
    ctx.out.write_text("profile.txt", &text)
}

pub fn predict(ctx: &mut Context) -> Result<()> {
    let records = load_records(&ctx.loaded, &ctx.problem)?;
    let validation = records
        .validation
        .as_ref()
        .ok_or_else(|| Error::Config("predict needs validation data (data.validation_path or an identification split)".into()))?;
    let ps = ctx.loaded.config.predict.clone();
    let dir: PathBuf = ps.traces.as_ref().map_or_else(|| ctx.out.path.clone(), |p| ctx.loaded.resolve(p));
    let set = read_traces(&dir, &ctx.problem.space)?;
    let burn = ctx.burn_in();
    let thin = ps.thin.unwrap_or_else(|| default_thin(&set, burn));
    let thetas = thinned_thetas(&set, &ctx.problem.space, burn, thin, ps.max_draws.unwrap_or(1000));
    let post = ctx.posterior(&records.identification)?;
    let pred = posterior_predictive(&post, &thetas, validation, ctx.seed)?;
    let p = pred.n_outputs;
    let names = validation.output_names();
    let mut rows = Vec::new();
    for (k, t) in pred.time.iter().enumerate() {
        for j in 0..p {
            let i = k * p + j;
            rows.push(vec![num(*t), names[j].clone(), num(pred.lower[i]), num(pred.median[i]), num(pred.upper[i]), num(pred.measured[i])]);
        }
    }
    ctx.out.write_table("predictive.csv", &["time", "output", "q2.5", "q50", "q97.5", "measured"], &rows)?;
    let rows: Vec<Vec<String>> = pred.loglik.iter().enumerate().map(|(i, l)| vec![i.to_string(), num(*l)]).collect();
    ctx.out.write_table("predictive_loglik.csv", &["draw", "loglik"], &rows)?;
    let mut text = String::new();
    report_line(&mut text, format!("{} draws (thinning {thin}); start from {}", thetas.len(), if pred.continued { "the filtered end of the identification record" } else { "the initial-state prior" }));
    for (j, n) in names.iter().enumerate() {
        report_line(&mut text, format!("{n}: measured output inside the 95% band at {:.1}% of steps", 100.0 * pred.coverage(j)));
    }
    let ll = credible_interval(&pred.loglik);
    report_line(&mut text, format!("validation log-likelihood: median {:.3}, 95% [{:.3}, {:.3}]", ll.median, ll.lower, ll.upper));
    ctx.out.write_text("predictive.txt", &text)
}

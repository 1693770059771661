//! Model comparison, profile likelihoods, posterior-predictive simulation and
//! physical summaries of calibrated networks.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::Dataset;
use crate::diagnostics::quantile_sorted;
use crate::error::{Error, Result};
use crate::model::{discretize, StateSpaceModel};
use crate::posterior::{optimize, OptimizeOptions, OptimizeReport, Posterior, Restricted, Target};
use crate::sampler::chain_rng;
use crate::synth::simulate_discrete;

/// Offset of the 95% profile-likelihood interval, `−½ χ²₀.₉₅(1)`.
pub const PROFILE_THRESHOLD: f64 = -1.92;

/// Akaike and Bayesian information criteria.
pub fn aic_bic(loglik: f64, n_params: usize, n_samples: usize) -> Result<(f64, f64)> {
    if n_samples == 0 {
        return Err(Error::Config("information criteria need at least one sample".into()));
    }
    let k = n_params as f64;
    Ok((-2.0 * loglik + 2.0 * k, -2.0 * loglik + k * (n_samples as f64).ln()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrtResult {
    pub statistic: f64,
    pub p_value: f64,
    /// The raw statistic was negative and has been set to zero.
    pub clamped: bool,
}

/// Likelihood ratio test of a nested pair with `df` extra parameters.
pub fn lrt(loglik_small: f64, loglik_large: f64, df: usize) -> Result<LrtResult> {
    if df == 0 {
        return Err(Error::Config("likelihood ratio test needs at least one degree of freedom".into()));
    }
    let raw = -2.0 * (loglik_small - loglik_large);
    if !raw.is_finite() {
        return Err(Error::Numerical(format!("likelihood ratio statistic is {raw}")));
    }
    let statistic = raw.max(0.0);
    let chi = ChiSquared::new(df as f64).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(LrtResult { statistic, p_value: chi.sf(statistic), clamped: raw < 0.0 })
}

/// How the per-step predictive term of WAIC is formed from the draws.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaicForm {
    /// Mean over draws of the log density.
    #[default]
    MeanLog,
    /// Log of the mean density (log pointwise predictive density).
    Lppd,
}

/// WAIC from a `draws x steps` matrix of per-step log predictive densities.
///
/// `−2 Σ_k [term_k − var_k]` where `var_k` is the unbiased sample variance of
/// the log densities across draws.
pub fn waic(pointwise: &[Vec<f64>], form: WaicForm) -> Result<f64> {
    let s = pointwise.len();
    if s < 2 {
        return Err(Error::Config("WAIC needs at least two posterior draws".into()));
    }
    let n = pointwise[0].len();
    if pointwise.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension("pointwise log densities have unequal lengths".into()));
    }
    let mut total = 0.0;
    let mut col = vec![0.0; s];
    for k in 0..n {
        for (c, row) in col.iter_mut().zip(pointwise) {
            *c = row[k];
        }
        let mean = col.iter().sum::<f64>() / s as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (s - 1) as f64;
        let term = match form {
            WaicForm::MeanLog => mean,
            WaicForm::Lppd => {
                let top = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                top + (col.iter().map(|v| (v - top).exp()).sum::<f64>() / s as f64).ln()
            }
        };
        total += term - var;
    }
    Ok(-2.0 * total)
}

/// Per-step log predictive densities of `posterior.data` at each physical
/// parameter vector.
pub fn pointwise_log_densities(posterior: &Posterior, thetas: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    thetas.par_iter().map(|t| Ok(posterior.filter_at(t, false)?.log_densities)).collect()
}

/// Data set on which criteria were evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataTag {
    Identification,
    Validation,
}

impl DataTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            DataTag::Identification => "identification",
            DataTag::Validation => "validation",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCriteria {
    pub model: String,
    pub data: DataTag,
    pub n_params: usize,
    pub n_samples: usize,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub waic: Option<f64>,
}

impl ModelCriteria {
    pub fn new(model: &str, data: DataTag, loglik: f64, n_params: usize, n_samples: usize, waic: Option<f64>) -> Result<Self> {
        let (aic, bic) = aic_bic(loglik, n_params, n_samples)?;
        Ok(Self { model: model.into(), data, n_params, n_samples, loglik, aic, bic, waic })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrtRow {
    pub small: String,
    pub large: String,
    pub data: DataTag,
    pub df: usize,
    pub result: LrtResult,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<ModelCriteria>,
    pub lrt: Vec<LrtRow>,
}

impl ComparisonTable {
    /// Adds the test of `small` nested in `large` on the given data set.
    pub fn add_lrt(&mut self, small: &str, large: &str, data: DataTag) -> Result<()> {
        let find = |name: &str| {
            self.rows
                .iter()
                .find(|r| r.model == name && r.data == data)
                .ok_or_else(|| Error::Config(format!("no {} criteria for model `{name}`", data.as_str())))
        };
        let (s, l) = (find(small)?, find(large)?);
        if l.n_params <= s.n_params {
            return Err(Error::Config(format!("`{large}` has no more parameters than `{small}`")));
        }
        let result = lrt(s.loglik, l.loglik, l.n_params - s.n_params)?;
        self.lrt.push(LrtRow { small: small.into(), large: large.into(), data, df: l.n_params - s.n_params, result });
        Ok(())
    }

    /// Aligned plain-text rendering.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:<15} {:>4} {:>14} {:>14} {:>14} {:>14}", "model", "data", "Np", "loglik", "AIC", "BIC", "WAIC");
        for r in &self.rows {
            let waic = r.waic.map_or_else(|| "-".to_string(), |w| format!("{w:.3}"));
            let _ = writeln!(
                out,
                "{:<12} {:<15} {:>4} {:>14.3} {:>14.3} {:>14.3} {:>14}",
                r.model,
                r.data.as_str(),
                r.n_params,
                r.loglik,
                r.aic,
                r.bic,
                waic
            );
        }
        if !self.lrt.is_empty() {
            let _ = writeln!(out, "\n{:<12} {:<12} {:<15} {:>4} {:>14} {:>12}", "small", "large", "data", "df", "LRT", "p_value");
            for t in &self.lrt {
                let _ = writeln!(
                    out,
                    "{:<12} {:<12} {:<15} {:>4} {:>14.4} {:>12.4e}{}",
                    t.small,
                    t.large,
                    t.data.as_str(),
                    t.df,
                    t.result.statistic,
                    t.result.p_value,
                    if t.result.clamped { "  (negative statistic clamped)" } else { "" }
                );
            }
        }
        out
    }
}

/// Profile of the objective along one unconstrained coordinate.
#[derive(Debug, Clone)]
pub struct ProfileCurve {
    pub index: usize,
    /// Grid values of the profiled coordinate, ascending.
    pub grid: Vec<f64>,
    /// Re-optimized objective per grid point (NaN where evaluation failed).
    pub values: Vec<f64>,
    /// Optimizer did not converge at the grid point.
    pub flagged: Vec<bool>,
    /// Maximizer of the remaining coordinates per grid point (full vector).
    pub optima: Vec<Vec<f64>>,
    /// Objective at the reference optimum, raised if a grid point beat it.
    pub reference: f64,
    pub reference_improved: bool,
    pub threshold: f64,
}

impl ProfileCurve {
    pub fn offsets(&self) -> Vec<f64> {
        self.values.iter().map(|v| v - self.reference).collect()
    }

    /// Smallest and largest grid values whose offset stays above the threshold.
    pub fn interval(&self) -> Option<(f64, f64)> {
        let inside: Vec<f64> = self
            .grid
            .iter()
            .zip(self.offsets())
            .filter(|(_, o)| *o > self.threshold)
            .map(|(g, _)| *g)
            .collect();
        Some((*inside.first()?, *inside.last()?))
    }

    /// Threshold crossings located by linear interpolation between grid points.
    pub fn crossings(&self) -> Vec<f64> {
        let off = self.offsets();
        let mut out = Vec::new();
        for i in 1..self.grid.len() {
            let (a, b) = (off[i - 1] - self.threshold, off[i] - self.threshold);
            if a.is_finite() && b.is_finite() && (a > 0.0) != (b > 0.0) {
                let t = a / (a - b);
                out.push(self.grid[i - 1] + t * (self.grid[i] - self.grid[i - 1]));
            }
        }
        out
    }
}

struct ProfilePoint {
    value: f64,
    flagged: bool,
    optimum: Vec<f64>,
}

fn profile_point(target: &dyn Target, index: usize, value: f64, warm: &[f64], opts: &OptimizeOptions) -> ProfilePoint {
    let restricted = Restricted { inner: target, index, value };
    if restricted.dim() == 0 {
        let optimum = restricted.expand(&[]);
        let v = target.value(&optimum).unwrap_or(f64::NAN);
        return ProfilePoint { value: v, flagged: !v.is_finite(), optimum };
    }
    match optimize(&restricted, &restricted.reduce(warm), opts) {
        Ok(r) => ProfilePoint {
            value: r.evaluation.log_density,
            flagged: !r.converged(),
            optimum: restricted.expand(&r.eta),
        },
        Err(_) => ProfilePoint { value: f64::NAN, flagged: true, optimum: warm.to_vec() },
    }
}

fn sweep(target: &dyn Target, index: usize, grid: &[f64], start: &[f64], opts: &OptimizeOptions) -> Vec<ProfilePoint> {
    let mut warm = start.to_vec();
    grid.iter()
        .map(|&g| {
            warm[index] = g;
            let p = profile_point(target, index, g, &warm, opts);
            if p.value.is_finite() {
                warm.clone_from(&p.optimum);
            }
            p
        })
        .collect()
}

/// Profile of `target` along unconstrained coordinate `index`.
///
/// The grid is traversed outwards from the reference optimum in both
/// directions, each point warm-started from its neighbour's optimum.
pub fn profile(
    target: &dyn Target,
    index: usize,
    grid: &[f64],
    reference: &OptimizeReport,
    opts: &OptimizeOptions,
) -> Result<ProfileCurve> {
    if index >= target.dim() {
        return Err(Error::Config(format!("profile index {index} out of range for {} parameters", target.dim())));
    }
    if grid.is_empty() || grid.iter().any(|g| !g.is_finite()) {
        return Err(Error::Config("profile grid must be non-empty and finite".into()));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let split = grid.partition_point(|g| *g < reference.eta[index]);
    let (below, above) = grid.split_at(split);
    let below_rev: Vec<f64> = below.iter().rev().copied().collect();
    let (mut down, up) = rayon::join(
        || sweep(target, index, &below_rev, &reference.eta, opts),
        || sweep(target, index, above, &reference.eta, opts),
    );
    down.reverse();
    down.extend(up);
    let best = down.iter().map(|p| p.value).filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    let base = reference.evaluation.log_density;
    Ok(ProfileCurve {
        index,
        grid,
        values: down.iter().map(|p| p.value).collect(),
        flagged: down.iter().map(|p| p.flagged).collect(),
        optima: down.into_iter().map(|p| p.optimum).collect(),
        reference: base.max(best),
        reference_improved: best > base,
        threshold: PROFILE_THRESHOLD,
    })
}

/// Posterior-predictive simulation over a validation record.
#[derive(Debug, Clone)]
pub struct Predictive {
    pub time: Vec<f64>,
    pub n_outputs: usize,
    /// Simulated outputs per draw, row-major `N x n_y`.
    pub trajectories: Vec<Vec<f64>>,
    /// 2.5%, 50% and 97.5% quantiles per step, row-major `N x n_y`.
    pub lower: Vec<f64>,
    pub median: Vec<f64>,
    pub upper: Vec<f64>,
    pub measured: Vec<f64>,
    /// Log-likelihood of the validation data per draw.
    pub loglik: Vec<f64>,
    /// Simulations start from the filtered state at the end of the
    /// identification record rather than from the model's initial prior.
    pub continued: bool,
}

impl Predictive {
    /// Share of steps where the measured output `j` lies inside the 95% band.
    pub fn coverage(&self, j: usize) -> f64 {
        let p = self.n_outputs;
        let n = self.time.len();
        let inside = (0..n)
            .filter(|&k| {
                let i = k * p + j;
                (self.lower[i]..=self.upper[i]).contains(&self.measured[i])
            })
            .count();
        inside as f64 / n as f64
    }
}

fn continues(first: &Dataset, second: &Dataset) -> bool {
    let last = *first.time().last().expect("dataset has rows");
    let gap = second.time()[0] - last;
    (gap - first.dt()).abs() <= 1e-6 * first.dt().max(1.0) && (first.dt() - second.dt()).abs() <= 1e-9 * first.dt()
}

fn sample_state<R: Rng + ?Sized>(mean: &DVector<f64>, upper: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    mean + upper.transpose() * z
}

/// Simulates the stochastic model at each physical parameter vector over the
/// inputs of `validation`.
///
/// When `validation` directly follows the identification record of
/// `posterior`, each simulation starts from a draw of the filtered state at
/// the end of the identification record. Otherwise it starts from the
/// model's initial-state prior with the first validation measurement.
pub fn posterior_predictive(posterior: &Posterior, thetas: &[Vec<f64>], validation: &Dataset, seed: u64) -> Result<Predictive> {
    if thetas.is_empty() {
        return Err(Error::Config("posterior predictive needs at least one draw".into()));
    }
    let val = posterior.with_data(std::sync::Arc::new(validation.clone()))?;
    if (validation.dt() - posterior.data.dt()).abs() > 1e-9 * posterior.data.dt() {
        return Err(Error::Dataset("validation sampling interval differs from the identification data".into()));
    }
    let model = posterior.model.as_ref();
    let continued = continues(&posterior.data, validation);
    let nu = validation.n_inputs();
    let nv = validation.len();
    let mut inputs = Vec::with_capacity((nv + 1) * nu);
    if continued {
        inputs.extend_from_slice(posterior.data.input(posterior.data.len() - 1));
    }
    inputs.extend_from_slice(validation.inputs());

    let runs: Vec<(Vec<f64>, f64)> = thetas
        .par_iter()
        .enumerate()
        .map(|(i, theta)| {
            let mut rng = chain_rng(seed, i);
            let dm = discretize(model, theta, validation.dt(), posterior.hold)?;
            let x0 = if continued {
                let run = posterior.filter_at(theta, false)?;
                sample_state(&run.final_mean, &run.final_sqrt, &mut rng)
            } else {
                let mean = model.initial_mean(theta, validation.output(0));
                let sd = DMatrix::from_fn(mean.len(), mean.len(), |a, b| {
                    if a == b && !model.has_initial_parameter(a) {
                        posterior.init_sd
                    } else {
                        0.0
                    }
                });
                sample_state(&mean, &sd, &mut rng)
            };
            let steps = inputs.len() / nu;
            let mut y = simulate_discrete(&dm, &x0, &inputs, steps, Some(&mut rng))?;
            if continued {
                y.drain(..validation.n_outputs());
            }
            Ok((y, val.log_likelihood(theta)?))
        })
        .collect::<Result<_>>()?;

    let p = validation.n_outputs();
    let mut lower = Vec::with_capacity(nv * p);
    let mut median = Vec::with_capacity(nv * p);
    let mut upper = Vec::with_capacity(nv * p);
    let mut col = vec![0.0; runs.len()];
    for i in 0..nv * p {
        for (c, (y, _)) in col.iter_mut().zip(&runs) {
            *c = y[i];
        }
        col.sort_by(f64::total_cmp);
        lower.push(quantile_sorted(&col, 0.025));
        median.push(quantile_sorted(&col, 0.5));
        upper.push(quantile_sorted(&col, 0.975));
    }
    let (trajectories, loglik) = runs.into_iter().unzip();
    Ok(Predictive {
        time: validation.time().to_vec(),
        n_outputs: p,
        trajectories,
        lower,
        median,
        upper,
        measured: validation.outputs().to_vec(),
        loglik,
        continued,
    })
}

/// Time constants `τ = −1/Re λ` of a state matrix, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeConstants {
    pub values: Vec<f64>,
    /// Some eigenvalues were complex; their constants use `1/|λ|`.
    pub complex: bool,
}

pub fn time_constants(a: &DMatrix<f64>) -> TimeConstants {
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let mut complex = false;
    let mut values: Vec<f64> = a
        .complex_eigenvalues()
        .iter()
        .map(|l| {
            if l.im.abs() > 1e-10 * scale {
                complex = true;
                1.0 / l.norm()
            } else {
                -1.0 / l.re
            }
        })
        .collect();
    values.sort_by(f64::total_cmp);
    TimeConstants { values, complex }
}

/// A named linear combination of parameters, e.g. `R_o + R_i`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Combination {
    pub name: String,
    pub terms: Vec<(String, f64)>,
}

impl Combination {
    pub fn sum(name: &str, params: &[&str]) -> Self {
        Self { name: name.into(), terms: params.iter().map(|p| (p.to_string(), 1.0)).collect() }
    }

    /// Parses `a + b - 2*c` style expressions.
    pub fn parse(name: &str, expr: &str) -> Result<Self> {
        let mut terms = Vec::new();
        let cleaned = expr.replace('-', "+-");
        for raw in cleaned.split('+').map(str::trim).filter(|t| !t.is_empty()) {
            let (sign, body) = match raw.strip_prefix('-') {
                Some(rest) => (-1.0, rest.trim()),
                None => (1.0, raw),
            };
            let (coef, param) = match body.split_once('*') {
                Some((c, p)) => {
                    let c: f64 = c.trim().parse().map_err(|_| Error::Config(format!("bad coefficient in `{expr}`")))?;
                    (c, p.trim())
                }
                None => (1.0, body),
            };
            if param.is_empty() {
                return Err(Error::Config(format!("empty term in `{expr}`")));
            }
            terms.push((param.to_string(), sign * coef));
        }
        if terms.is_empty() {
            return Err(Error::Config(format!("combination `{name}` has no terms")));
        }
        Ok(Self { name: name.into(), terms })
    }

    pub fn evaluate(&self, names: &[String], theta: &[f64]) -> Result<f64> {
        self.terms
            .iter()
            .map(|(p, c)| {
                let i = names
                    .iter()
                    .position(|n| n == p)
                    .ok_or_else(|| Error::Config(format!("combination `{}` uses unknown parameter `{p}`", self.name)))?;
                Ok(c * theta[i])
            })
            .sum()
    }
}

/// Per-draw derived physical quantities.
#[derive(Debug, Clone)]
pub struct PhysicalSummary {
    /// Time constants per draw, ascending, in the model's time unit.
    pub time_constants: Vec<Vec<f64>>,
    pub complex_draws: usize,
    pub combinations: Vec<(String, Vec<f64>)>,
}

pub fn physical_summary(model: &dyn StateSpaceModel, thetas: &[Vec<f64>], combinations: &[Combination]) -> Result<PhysicalSummary> {
    let tcs: Vec<TimeConstants> =
        thetas.par_iter().map(|t| Ok(time_constants(&model.matrices(t)?.a))).collect::<Result<_>>()?;
    let names = model.param_names();
    let combos = combinations
        .iter()
        .map(|c| Ok((c.name.clone(), thetas.iter().map(|t| c.evaluate(names, t)).collect::<Result<Vec<_>>>()?)))
        .collect::<Result<_>>()?;
    Ok(PhysicalSummary {
        complex_draws: tcs.iter().filter(|t| t.complex).count(),
        time_constants: tcs.into_iter().map(|t| t.values).collect(),
        combinations: combos,
    })
}

/// Mean and equal-tailed 95% interval of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub mean: f64,
    pub lower: f64,
    pub median: f64,
    pub upper: f64,
}

pub fn credible_interval(values: &[f64]) -> Interval {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Interval {
        mean: v.iter().sum::<f64>() / v.len() as f64,
        lower: quantile_sorted(&v, 0.025),
        median: quantile_sorted(&v, 0.5),
        upper: quantile_sorted(&v, 0.975),
    }
}

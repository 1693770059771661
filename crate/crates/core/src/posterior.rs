//! Log-posterior in unconstrained coordinates and Newton-type point
//! estimation.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::filter::{run_filter, FilterInit, FilterOptions, FilterRun};
use crate::linalg::regularize_spd;
use crate::model::{discretize_with_derivatives, Hold, StateSpaceModel};
use crate::param::ParameterSpace;

/// Value, gradient and curvature of a log density at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// The objective (depends on the [`Mode`]); `-inf` outside the support.
    pub log_density: f64,
    pub grad: DVector<f64>,
    /// Approximation of the negative Hessian of `log_density`.
    pub hess: DMatrix<f64>,
    pub log_lik: f64,
    pub log_prior: f64,
    pub log_jacobian: f64,
    /// Per-step log predictive densities (empty for analytic targets).
    pub pointwise: Vec<f64>,
}

impl Evaluation {
    pub fn is_finite(&self) -> bool {
        self.log_density.is_finite()
    }

    /// An evaluation outside the support.
    pub fn rejected(dim: usize) -> Self {
        Self {
            log_density: f64::NEG_INFINITY,
            grad: DVector::zeros(dim),
            hess: DMatrix::identity(dim, dim),
            log_lik: f64::NEG_INFINITY,
            log_prior: f64::NEG_INFINITY,
            log_jacobian: 0.0,
            pointwise: Vec::new(),
        }
    }
}

/// A differentiable log density on `R^dim`.
pub trait Target: Send + Sync {
    fn dim(&self) -> usize;
    fn evaluate(&self, eta: &[f64]) -> Result<Evaluation>;

    /// Objective value only; implementations may skip derivative work.
    fn value(&self, eta: &[f64]) -> Result<f64> {
        Ok(self.evaluate(eta)?.log_density)
    }
}

/// Which terms enter the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// `ln p(y|theta) + ln p(theta) + ln|det J|`: the density of eta, sampled by MCMC.
    #[default]
    Posterior,
    /// `ln p(y|theta) + ln p(theta)`: maximized for the MAP estimate in theta.
    Map,
    /// `ln p(y|theta)`: maximized for the ML estimate.
    Likelihood,
}

/// How the curvature is mapped from theta to eta.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Curvature {
    /// `J^T H J - d^2 ln|det J|`: positive semi-definite whenever the
    /// theta-space curvature is.
    #[default]
    GaussNewton,
    /// Adds `-diag(g_theta * d^2 theta / d eta^2)`, the remaining term of
    /// the exact chain rule.
    Full,
}

/// The calibration problem: a model, its parameter space and the data.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub model: Arc<dyn StateSpaceModel>,
    pub space: ParameterSpace,
    pub data: Arc<Dataset>,
    pub hold: Hold,
    pub mode: Mode,
    pub curvature: Curvature,
    /// Standard deviation of the initial state prior (state units).
    pub init_sd: f64,
    pub filter: FilterOptions,
}

impl Posterior {
    pub fn new(model: Arc<dyn StateSpaceModel>, space: ParameterSpace, data: Arc<Dataset>) -> Result<Self> {
        if model.param_names().len() != space.len() {
            return Err(Error::Config(format!(
                "model has {} parameters, parameter space has {}",
                model.param_names().len(),
                space.len()
            )));
        }
        for (a, b) in model.param_names().iter().zip(space.params()) {
            if *a != b.name {
                return Err(Error::Config(format!("parameter order mismatch: model `{a}`, space `{}`", b.name)));
            }
        }
        if data.input_names() != model.input_names() || data.output_names() != model.output_names() {
            return Err(Error::Dataset(format!(
                "dataset columns {:?} / {:?} do not match the model signals {:?} / {:?}",
                data.input_names(),
                data.output_names(),
                model.input_names(),
                model.output_names()
            )));
        }
        Ok(Self {
            model,
            space,
            data,
            hold: Hold::First,
            mode: Mode::Posterior,
            curvature: Curvature::GaussNewton,
            init_sd: 1.0,
            filter: FilterOptions::default(),
        })
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_curvature(mut self, curvature: Curvature) -> Self {
        self.curvature = curvature;
        self
    }

    /// Same problem on another dataset.
    pub fn with_data(&self, data: Arc<Dataset>) -> Result<Self> {
        let mut p = Self::new(self.model.clone(), self.space.clone(), data)?;
        p.hold = self.hold;
        p.mode = self.mode;
        p.curvature = self.curvature;
        p.init_sd = self.init_sd;
        p.filter = self.filter;
        Ok(p)
    }

    /// Filter pass at a full physical parameter vector. With derivatives,
    /// gradient and curvature are with respect to the free parameters.
    pub fn filter_at(&self, theta: &[f64], with_derivatives: bool) -> Result<FilterRun> {
        let wrap = |e: Error| Error::Evaluation { theta: theta.to_vec(), source: Box::new(e) };
        let free = if with_derivatives { self.space.free_indices() } else { Vec::new() };
        let dm = discretize_with_derivatives(self.model.as_ref(), theta, &free, self.data.dt(), self.hold).map_err(wrap)?;
        let init = FilterInit::from_model(self.model.as_ref(), theta, &free, self.data.output(0), self.init_sd);
        let opts = FilterOptions { with_derivatives, ..self.filter };
        run_filter(&dm, &self.data, &init, &opts).map_err(wrap)
    }

    pub fn log_likelihood(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.filter_at(theta, false)?.loglik)
    }
}

impl Target for Posterior {
    fn dim(&self) -> usize {
        self.space.n_free()
    }

    fn value(&self, eta: &[f64]) -> Result<f64> {
        let theta = self.space.from_unconstrained(eta);
        let lp = if self.mode == Mode::Likelihood { 0.0 } else { self.space.log_prior(&theta).value };
        if lp == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        let lj = if self.mode == Mode::Posterior { self.space.log_jacobian(eta).value } else { 0.0 };
        Ok(self.log_likelihood(&theta)? + lp + lj)
    }

    fn evaluate(&self, eta: &[f64]) -> Result<Evaluation> {
        let d = self.dim();
        if eta.len() != d {
            return Err(Error::Dimension(format!("expected {d} unconstrained values, got {}", eta.len())));
        }
        if eta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite unconstrained point {eta:?}")));
        }
        let theta = self.space.from_unconstrained(eta);
        let use_prior = self.mode != Mode::Likelihood;
        let prior = self.space.log_prior(&theta);
        if use_prior && prior.value == f64::NEG_INFINITY {
            return Ok(Evaluation::rejected(d));
        }
        let run = self.filter_at(&theta, true)?;
        let lik = LikelihoodTerms {
            loglik: run.loglik,
            grad: DVector::from_column_slice(&run.grad),
            hess: run.hess,
            pointwise: run.log_densities,
        };
        Ok(assemble(&self.space, self.mode, self.curvature, eta, lik))
    }
}

/// Log-likelihood of the physical parameters with its gradient and
/// curvature (negative Hessian) over the free parameters.
#[derive(Debug, Clone)]
pub struct LikelihoodTerms {
    pub loglik: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
    pub pointwise: Vec<f64>,
}

/// Adds the prior and the log-Jacobian to likelihood terms computed at
/// `theta = f^-1(eta)` and maps everything to the unconstrained space.
pub fn assemble(space: &ParameterSpace, mode: Mode, curvature: Curvature, eta: &[f64], lik: LikelihoodTerms) -> Evaluation {
    let d = eta.len();
    let theta = space.from_unconstrained(eta);
    let use_prior = mode != Mode::Likelihood;
    let prior = space.log_prior(&theta);
    let mut g = lik.grad;
    let mut h = lik.hess;
    if use_prior {
        for i in 0..d {
            g[i] += prior.grad[i];
            h[(i, i)] -= prior.hess_diag[i];
        }
    }
    let (mut ge, mut he) = chain_rule(space, eta, &g, &h, curvature);
    let mut log_jacobian = 0.0;
    if mode == Mode::Posterior {
        let lj = space.log_jacobian(eta);
        log_jacobian = lj.value;
        for i in 0..d {
            ge[i] += lj.grad[i];
            he[(i, i)] -= lj.hess_diag[i];
        }
    }
    let log_prior = if use_prior { prior.value } else { 0.0 };
    Evaluation {
        log_density: lik.loglik + log_prior + log_jacobian,
        grad: ge,
        hess: he,
        log_lik: lik.loglik,
        log_prior: prior.value,
        log_jacobian,
        pointwise: lik.pointwise,
    }
}

/// Maps the gradient `g` and curvature `h` (negative Hessian) of a function
/// of the free physical parameters to the unconstrained point `eta`.
pub fn chain_rule(
    space: &ParameterSpace,
    eta: &[f64],
    g: &DVector<f64>,
    h: &DMatrix<f64>,
    curvature: Curvature,
) -> (DVector<f64>, DMatrix<f64>) {
    let d = eta.len();
    let (jac, jac2) = space.jacobian(eta);
    let mut ge = DVector::zeros(d);
    let mut he = DMatrix::zeros(d, d);
    for i in 0..d {
        ge[i] = jac[i] * g[i];
        for j in 0..d {
            he[(i, j)] = jac[i] * h[(i, j)] * jac[j];
        }
        if curvature == Curvature::Full {
            he[(i, i)] -= g[i] * jac2[i];
        }
    }
    (ge, he)
}

/// `-1/2 (x - mean)^T precision (x - mean)` with exact derivatives.
#[derive(Debug, Clone)]
pub struct GaussianTarget {
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
}

impl GaussianTarget {
    pub fn new(mean: DVector<f64>, covariance: &DMatrix<f64>) -> Result<Self> {
        let precision = covariance
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular covariance".into()))?;
        Ok(Self { mean, precision })
    }
}

impl Target for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn evaluate(&self, eta: &[f64]) -> Result<Evaluation> {
        let r = DVector::from_column_slice(eta) - &self.mean;
        let pr = &self.precision * &r;
        let v = -0.5 * r.dot(&pr);
        Ok(Evaluation {
            log_density: v,
            grad: -pr,
            hess: self.precision.clone(),
            log_lik: v,
            log_prior: 0.0,
            log_jacobian: 0.0,
            pointwise: Vec::new(),
        })
    }
}

/// Target with one coordinate held fixed; used for profiles.
pub struct Restricted<'a> {
    pub inner: &'a dyn Target,
    pub index: usize,
    pub value: f64,
}

impl Restricted<'_> {
    pub fn expand(&self, eta: &[f64]) -> Vec<f64> {
        let mut full = Vec::with_capacity(eta.len() + 1);
        full.extend_from_slice(&eta[..self.index]);
        full.push(self.value);
        full.extend_from_slice(&eta[self.index..]);
        full
    }

    pub fn reduce(&self, full: &[f64]) -> Vec<f64> {
        full.iter().enumerate().filter(|&(i, _)| i != self.index).map(|(_, &v)| v).collect()
    }
}

impl Target for Restricted<'_> {
    fn dim(&self) -> usize {
        self.inner.dim() - 1
    }

    fn evaluate(&self, eta: &[f64]) -> Result<Evaluation> {
        let e = self.inner.evaluate(&self.expand(eta))?;
        let keep: Vec<usize> = (0..self.inner.dim()).filter(|&i| i != self.index).collect();
        let grad = DVector::from_iterator(keep.len(), keep.iter().map(|&i| e.grad[i]));
        let hess = DMatrix::from_fn(keep.len(), keep.len(), |a, b| e.hess[(keep[a], keep[b])]);
        Ok(Evaluation { grad, hess, ..e })
    }

    fn value(&self, eta: &[f64]) -> Result<f64> {
        self.inner.value(&self.expand(eta))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeOptions {
    pub max_iter: usize,
    /// Stop when `max |g| < grad_tol`.
    pub grad_tol: f64,
    /// Stop when the accepted step has `max |d eta| < step_tol`.
    pub step_tol: f64,
    /// Largest Newton step per coordinate.
    pub max_step: f64,
    pub max_backtracks: usize,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self { max_iter: 200, grad_tol: 1e-8, step_tol: 1e-8, max_step: 2.0, max_backtracks: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Gradient,
    Step,
    LineSearch,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct OptimizeReport {
    pub eta: Vec<f64>,
    pub evaluation: Evaluation,
    pub iterations: usize,
    pub evaluations: usize,
    pub grad_norm: f64,
    pub reason: StopReason,
}

impl OptimizeReport {
    pub fn converged(&self) -> bool {
        matches!(self.reason, StopReason::Gradient | StopReason::Step)
    }
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Newton direction `H^-1 g` with a regularized curvature.
pub fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Result<DVector<f64>> {
    let h = regularize_spd(hess);
    let chol = h
        .cholesky()
        .ok_or_else(|| Error::Numerical("curvature is not positive definite after regularization".into()))?;
    Ok(chol.solve(grad))
}

/// Damped Newton ascent with backtracking (Armijo) line search.
pub fn optimize(target: &dyn Target, eta0: &[f64], opts: &OptimizeOptions) -> Result<OptimizeReport> {
    let mut eta = eta0.to_vec();
    let mut cur = target.evaluate(&eta)?;
    if !cur.is_finite() {
        return Err(Error::Numerical("objective is not finite at the starting point".into()));
    }
    let mut evaluations = 1;
    let mut iterations = 0;
    let reason = loop {
        if max_abs(&cur.grad) < opts.grad_tol {
            break StopReason::Gradient;
        }
        if iterations >= opts.max_iter {
            break StopReason::MaxIterations;
        }
        let mut d = newton_direction(&cur.hess, &cur.grad)?;
        let len = max_abs(&d);
        if len > opts.max_step {
            d *= opts.max_step / len;
        }
        let slope = cur.grad.dot(&d);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let cand: Vec<f64> = eta.iter().zip(d.iter()).map(|(e, di)| e + t * di).collect();
            evaluations += 1;
            if let Ok(e) = target.evaluate(&cand) {
                if e.is_finite() && e.log_density >= cur.log_density + 1e-4 * t * slope {
                    accepted = Some((cand, e));
                    break;
                }
            }
            t *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some((cand, e)) => {
                eta = cand;
                cur = e;
                if t * len.min(opts.max_step) < opts.step_tol {
                    break StopReason::Step;
                }
            }
            None => break StopReason::LineSearch,
        }
    };
    Ok(OptimizeReport { grad_norm: max_abs(&cur.grad), eta, evaluation: cur, iterations, evaluations, reason })
}

/// Outcome of one start of [`multi_start`].
#[derive(Debug)]
pub struct StartResult {
    pub start: Vec<f64>,
    pub result: Result<OptimizeReport>,
}

/// Optimize from `n` starting points drawn from the prior (in parallel).
pub fn multi_start<R: Rng + ?Sized>(
    target: &dyn Target,
    space: &ParameterSpace,
    fallback: &[f64],
    n: usize,
    rng: &mut R,
    opts: &OptimizeOptions,
) -> Vec<StartResult> {
    let starts: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let theta = space.sample_prior(rng, fallback);
            space.to_unconstrained(&theta).unwrap_or_else(|_| vec![0.0; space.n_free()])
        })
        .collect();
    starts
        .into_par_iter()
        .map(|start| {
            let result = optimize(target, &start, opts);
            StartResult { start, result }
        })
        .collect()
}

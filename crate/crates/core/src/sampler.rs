//! Metropolis-Hastings samplers over a [`Target`].
//!
//! The second-order proposal is a Newton step from the current point,
//!
//! ```text
//! eta* ~ N(eta + 1/2 D H^-1 D g, D H^-1 D),   D = diag(sqrt(step)),
//! ```
//!
//! which for a scalar step `eps` is `N(eta + eps/2 H^-1 g, eps H^-1)`.
//! The random-walk baseline draws `eta* ~ N(eta, Sigma)`.
//!
//! An optional warm-up shrinks the step while a chain climbs from a poor
//! starting point. During the first `warmup` iterations the step is
//! multiplied by `s_i <= 1`, with the Robbins-Monro update
//!
//! ```text
//! ln s_{i+1} = min(0, ln s_i + (alpha_i - warmup_accept) / (i + 1)^0.6)
//! ```
//!
//! and from iteration `warmup` on the configured step is used unchanged.
//! Warm-up draws are not from the target and belong in the burn-in.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::regularize_spd;
use crate::param::ParameterSpace;
use crate::posterior::{Evaluation, Target};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub enum StepSize {
    Scalar(f64),
    /// One step length per coordinate.
    Diagonal(Vec<f64>),
}

impl StepSize {
    fn diagonal(&self, dim: usize) -> Result<Vec<f64>> {
        let d = match self {
            StepSize::Scalar(e) => vec![*e; dim],
            StepSize::Diagonal(v) if v.len() == dim => v.clone(),
            StepSize::Diagonal(v) => {
                return Err(Error::Config(format!("step size has {} entries, target has {dim}", v.len())))
            }
        };
        if d.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
            return Err(Error::Config("step sizes must be positive".into()));
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProposalKind {
    SecondOrder,
    /// Gaussian random walk with the given covariance (unconstrained space).
    RandomWalk(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Iterations per chain.
    pub iterations: usize,
    pub step: StepSize,
    pub proposal: ProposalKind,
    pub seed: u64,
    /// Consecutive evaluation failures after which a chain is abandoned.
    pub max_failures: usize,
    /// Iterations with an adapted (reduced) step; 0 disables warm-up.
    pub warmup: usize,
    /// Acceptance probability targeted by the warm-up adaptation.
    pub warmup_accept: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            step: StepSize::Scalar(0.3),
            proposal: ProposalKind::SecondOrder,
            seed: 0,
            max_failures: 50,
            warmup: 0,
            warmup_accept: 0.3,
        }
    }
}

/// One Markov chain. Draw `i` is the state after iteration `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub dim: usize,
    pub initial: Vec<f64>,
    /// Row-major `iterations x dim`.
    pub samples: Vec<f64>,
    pub log_posts: Vec<f64>,
    pub accepted: Vec<bool>,
    pub evaluations: usize,
    /// Set when the chain was abandoned.
    pub failure: Option<String>,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.log_posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_posts.is_empty()
    }

    pub fn draw(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    /// Trace of coordinate `j`.
    pub fn series(&self, j: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.samples[i * self.dim + j]).collect()
    }

    pub fn accept_rate(&self) -> f64 {
        if self.accepted.is_empty() {
            return 0.0;
        }
        self.accepted.iter().filter(|&&a| a).count() as f64 / self.accepted.len() as f64
    }

    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainSet {
    pub dim: usize,
    pub chains: Vec<Chain>,
}

impl ChainSet {
    /// Chains that ran to completion.
    pub fn completed(&self) -> Vec<&Chain> {
        self.chains.iter().filter(|c| !c.failed()).collect()
    }

    /// Per-chain traces of coordinate `j` after `burn_in`, completed chains only.
    pub fn series(&self, j: usize, burn_in: usize) -> Vec<Vec<f64>> {
        self.completed().iter().map(|c| c.series(j).split_off(burn_in.min(c.len()))).collect()
    }

    /// Retained draws of completed chains (after burn-in, every `thin`-th).
    pub fn pooled(&self, burn_in: usize, thin: usize) -> Vec<Vec<f64>> {
        let thin = thin.max(1);
        let mut out = Vec::new();
        for c in self.completed() {
            for i in (burn_in..c.len()).step_by(thin) {
                out.push(c.draw(i).to_vec());
            }
        }
        out
    }

    pub fn total_evaluations(&self) -> usize {
        self.chains.iter().map(|c| c.evaluations).sum()
    }
}

/// Second-order proposal parameters derived from an evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct NewtonProposal {
    pub mean: DVector<f64>,
    /// Lower Cholesky factor of the regularized curvature.
    chol: DMatrix<f64>,
    /// Square roots of the step lengths.
    scale: DVector<f64>,
    log_det_cov: f64,
}

impl NewtonProposal {
    pub fn new(eta: &[f64], eval: &Evaluation, step: &[f64]) -> Result<Self> {
        let d = eta.len();
        let h = regularize_spd(&eval.hess);
        let chol = h
            .cholesky()
            .ok_or_else(|| Error::Numerical("proposal curvature has no Cholesky factor after regularization".into()))?
            .l();
        let scale = DVector::from_iterator(d, step.iter().map(|e| e.sqrt()));
        // mean = eta + 1/2 D H^-1 D g
        let dg = eval.grad.component_mul(&scale);
        let y = chol.solve_lower_triangular(&dg).expect("non-singular factor");
        let hinv_dg = chol.transpose().solve_upper_triangular(&y).expect("non-singular factor");
        let mean = DVector::from_column_slice(eta) + hinv_dg.component_mul(&scale) * 0.5;
        let log_det_cov = step.iter().map(|e| e.ln()).sum::<f64>() - 2.0 * chol.diagonal().iter().map(|l| l.ln()).sum::<f64>();
        Ok(Self { mean, chol, scale, log_det_cov })
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let hinv = (&self.chol * self.chol.transpose()).try_inverse().expect("positive definite");
        let s = DMatrix::from_diagonal(&self.scale);
        &s * hinv * &s
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.mean.len();
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let w = self.chol.transpose().solve_upper_triangular(&z).expect("non-singular factor");
        (&self.mean + w.component_mul(&self.scale)).iter().copied().collect()
    }

    /// `ln q(x | current)`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.mean.len();
        let r = (DVector::from_column_slice(x) - &self.mean).component_div(&self.scale);
        // r^T H r = |L^T r|^2
        let lt = self.chol.transpose() * r;
        -0.5 * (d as f64 * LN_2PI + self.log_det_cov + lt.norm_squared())
    }
}

/// `min(1, exp(log_ratio))` evaluated in log space.
pub fn acceptance_probability(candidate: f64, current: f64, q_forward: f64, q_reverse: f64) -> f64 {
    log_acceptance(candidate, current, q_forward, q_reverse).min(0.0).exp()
}

fn log_acceptance(candidate: f64, current: f64, q_forward: f64, q_reverse: f64) -> f64 {
    if candidate == f64::NEG_INFINITY || candidate.is_nan() {
        return f64::NEG_INFINITY;
    }
    let v = (candidate - current) + (q_reverse - q_forward);
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Per-chain random stream derived from the master seed.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

/// Initial points drawn from the prior, one per chain, on a stream
/// separate from the chains' own.
pub fn prior_initial_points(space: &ParameterSpace, fallback: &[f64], chains: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    (0..chains).map(|_| space.to_unconstrained(&space.sample_prior(&mut rng, fallback))).collect()
}

struct State {
    eta: Vec<f64>,
    log_post: f64,
    /// Gradient and curvature, kept for the second-order proposal.
    eval: Option<Evaluation>,
    proposal: Option<NewtonProposal>,
}

fn run_chain(target: &dyn Target, config: &SamplerConfig, init: &[f64], index: usize) -> Chain {
    let dim = target.dim();
    let mut rng = chain_rng(config.seed, index);
    let mut chain = Chain {
        dim,
        initial: init.to_vec(),
        samples: Vec::with_capacity(config.iterations * dim),
        log_posts: Vec::with_capacity(config.iterations),
        accepted: Vec::with_capacity(config.iterations),
        evaluations: 0,
        failure: None,
    };
    let step = match config.step.diagonal(dim) {
        Ok(s) => s,
        Err(e) => {
            chain.failure = Some(e.to_string());
            return chain;
        }
    };
    let rw_chol = match &config.proposal {
        ProposalKind::RandomWalk(cov) => match cov.clone().cholesky() {
            Some(c) if cov.nrows() == dim => Some(c.l()),
            _ => {
                chain.failure = Some("random-walk covariance must be positive definite".into());
                return chain;
            }
        },
        ProposalKind::SecondOrder => None,
    };
    let second_order = rw_chol.is_none();
    let scaled = |s: f64| -> Vec<f64> { step.iter().map(|e| e * s).collect() };

    let evaluate = |eta: &[f64], step: &[f64]| -> Result<(f64, Option<Evaluation>, Option<NewtonProposal>)> {
        if second_order {
            let mut e = target.evaluate(eta)?;
            if !e.is_finite() {
                return Ok((f64::NEG_INFINITY, None, None));
            }
            e.pointwise = Vec::new();
            let p = NewtonProposal::new(eta, &e, step)?;
            Ok((e.log_density, Some(e), Some(p)))
        } else {
            Ok((target.value(eta)?, None, None))
        }
    };

    let mut log_scale = 0.0_f64;
    let mut current_step = step.clone();
    chain.evaluations += 1;
    let mut state = match evaluate(init, &current_step) {
        Ok((lp, eval, proposal)) if lp.is_finite() => State { eta: init.to_vec(), log_post: lp, eval, proposal },
        Ok(_) => {
            chain.failure = Some("initial point has zero posterior density".into());
            return chain;
        }
        Err(e) => {
            chain.failure = Some(format!("initial point: {e}"));
            return chain;
        }
    };

    let mut failures = 0;
    for i in 0..config.iterations {
        let adapting = i < config.warmup;
        if i == config.warmup && log_scale != 0.0 {
            log_scale = 0.0;
            current_step = step.clone();
            if let Some(e) = &state.eval {
                if let Ok(p) = NewtonProposal::new(&state.eta, e, &current_step) {
                    state.proposal = Some(p);
                }
            }
        }
        let (cand, q_fwd) = match (&state.proposal, &rw_chol) {
            (Some(p), _) => {
                let c = p.sample(&mut rng);
                let q = p.log_density(&c);
                (c, q)
            }
            (None, Some(l)) => {
                let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                let c: Vec<f64> =
                    (DVector::from_column_slice(&state.eta) + l * z * (0.5 * log_scale).exp()).iter().copied().collect();
                (c, 0.0)
            }
            (None, None) => unreachable!("second-order state without a proposal"),
        };
        chain.evaluations += 1;
        let u: f64 = rng.gen();
        let mut accept = false;
        let mut alpha = 0.0;
        match evaluate(&cand, &current_step) {
            Ok((lp, eval, prop)) => {
                failures = 0;
                let q_rev = match &prop {
                    Some(p) => p.log_density(&state.eta),
                    None => 0.0,
                };
                let la = log_acceptance(lp, state.log_post, q_fwd, q_rev);
                alpha = la.min(0.0).exp();
                if u.ln() < la {
                    state = State { eta: cand, log_post: lp, eval, proposal: prop };
                    accept = true;
                }
            }
            Err(e) => {
                failures += 1;
                if failures > config.max_failures {
                    chain.failure = Some(format!("{failures} consecutive evaluation failures, last: {e}"));
                    return chain;
                }
            }
        }
        if adapting {
            log_scale = (log_scale + (alpha - config.warmup_accept) / ((i + 1) as f64).powf(0.6)).min(0.0);
            current_step = scaled(log_scale.exp());
            if let Some(e) = &state.eval {
                if let Ok(p) = NewtonProposal::new(&state.eta, e, &current_step) {
                    state.proposal = Some(p);
                }
            }
        }
        chain.samples.extend_from_slice(&state.eta);
        chain.log_posts.push(state.log_post);
        chain.accepted.push(accept);
    }
    chain
}

/// Run one chain per initial point, in parallel. Results are
/// deterministic given the seed.
pub fn run_chains(target: &dyn Target, config: &SamplerConfig, initial: &[Vec<f64>]) -> Result<ChainSet> {
    let dim = target.dim();
    if let Some(bad) = initial.iter().find(|p| p.len() != dim) {
        return Err(Error::Dimension(format!("initial point has {} entries, target has {dim}", bad.len())));
    }
    if let ProposalKind::RandomWalk(cov) = &config.proposal {
        if cov.shape() != (dim, dim) || cov.clone().cholesky().is_none() {
            return Err(Error::Config("random-walk covariance must be a positive definite d x d matrix".into()));
        }
    }
    config.step.diagonal(dim)?;
    if !(config.warmup_accept > 0.0 && config.warmup_accept < 1.0) {
        return Err(Error::Config("warmup_accept must be in (0, 1)".into()));
    }
    let chains = (0..initial.len())
        .into_par_iter()
        .map(|i| run_chain(target, config, &initial[i], i))
        .collect();
    Ok(ChainSet { dim, chains })
}

//! Parameter transforms between physical and unconstrained space, Jacobian
//! adjustments and prior densities.

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Map from a physical parameter to the unconstrained sampling space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Transform {
    /// `eta = ln(theta)`, theta in (0, inf).
    Log,
    /// `eta = logit((theta - lo) / (hi - lo))`, theta in (lo, hi).
    Logit { lo: f64, hi: f64 },
    /// Held at `value`; excluded from the unconstrained vector.
    Fixed { value: f64 },
}

/// Prior density on a physical parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Prior {
    /// Gamma with shape `shape` and expected value `mean` (rate = shape / mean).
    Gamma { shape: f64, mean: f64 },
    /// Beta(a, b) rescaled to (lo, hi).
    Beta { a: f64, b: f64, lo: f64, hi: f64 },
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub transform: Transform,
    pub prior: Prior,
}

impl Parameter {
    pub fn new(name: impl Into<String>, transform: Transform, prior: Prior) -> Self {
        Self { name: name.into(), transform, prior }
    }

    pub fn is_free(&self) -> bool {
        !matches!(self.transform, Transform::Fixed { .. })
    }
}

/// Logistic function, evaluated without overflow for large |x|.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`, stable for large |x|.
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

impl Transform {
    pub fn validate(&self, name: &str) -> Result<()> {
        match *self {
            Transform::Logit { lo, hi } if !(lo < hi) || !lo.is_finite() || !hi.is_finite() => {
                Err(Error::Config(format!("parameter `{name}`: logit bounds require lo < hi")))
            }
            _ => Ok(()),
        }
    }

    pub fn to_unconstrained(&self, name: &str, theta: f64) -> Result<Option<f64>> {
        match *self {
            Transform::Log => {
                if theta > 0.0 && theta.is_finite() {
                    Ok(Some(theta.ln()))
                } else {
                    Err(Error::Domain { name: name.into(), value: theta, domain: "(0, inf)".into() })
                }
            }
            Transform::Logit { lo, hi } => {
                if theta > lo && theta < hi {
                    let z = (theta - lo) / (hi - lo);
                    Ok(Some((z / (1.0 - z)).ln()))
                } else {
                    Err(Error::Domain { name: name.into(), value: theta, domain: format!("({lo}, {hi})") })
                }
            }
            Transform::Fixed { .. } => Ok(None),
        }
    }

    /// Physical value for an unconstrained coordinate.
    pub fn from_unconstrained(&self, eta: f64) -> f64 {
        match *self {
            Transform::Log => eta.exp(),
            Transform::Logit { lo, hi } => lo + (hi - lo) * sigmoid(eta),
            Transform::Fixed { value } => value,
        }
    }

    /// `(d theta / d eta, d^2 theta / d eta^2)`.
    pub fn derivatives(&self, eta: f64) -> (f64, f64) {
        match *self {
            Transform::Log => {
                let t = eta.exp();
                (t, t)
            }
            Transform::Logit { lo, hi } => {
                let s = sigmoid(eta);
                let d = (hi - lo) * s * (1.0 - s);
                (d, d * (1.0 - 2.0 * s))
            }
            Transform::Fixed { .. } => (0.0, 0.0),
        }
    }

    /// `(ln |d theta / d eta|, first derivative, second derivative)`.
    pub fn log_jacobian(&self, eta: f64) -> (f64, f64, f64) {
        match *self {
            Transform::Log => (eta, 1.0, 0.0),
            Transform::Logit { lo, hi } => {
                let s = sigmoid(eta);
                // ln s + ln(1 - s) = -softplus(-eta) - softplus(eta)
                let v = (hi - lo).ln() - softplus(-eta) - softplus(eta);
                (v, 1.0 - 2.0 * s, -2.0 * s * (1.0 - s))
            }
            Transform::Fixed { .. } => (0.0, 0.0, 0.0),
        }
    }
}

impl Prior {
    pub fn validate(&self, name: &str) -> Result<()> {
        let ok = match *self {
            Prior::Gamma { shape, mean } => shape > 0.0 && mean > 0.0,
            Prior::Beta { a, b, lo, hi } => a > 0.0 && b > 0.0 && lo < hi,
            Prior::Flat => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("parameter `{name}`: invalid prior hyper-parameters")))
        }
    }

    /// `(ln p, d ln p / d theta, d^2 ln p / d theta^2)`; the value is
    /// `-inf` outside the support.
    pub fn log_density(&self, theta: f64) -> (f64, f64, f64) {
        match *self {
            Prior::Gamma { shape, mean } => {
                if !(theta > 0.0) || !theta.is_finite() {
                    return (f64::NEG_INFINITY, 0.0, 0.0);
                }
                let rate = shape / mean;
                let v = shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * theta.ln() - rate * theta;
                let d1 = (shape - 1.0) / theta - rate;
                let d2 = -(shape - 1.0) / (theta * theta);
                (v, d1, d2)
            }
            Prior::Beta { a, b, lo, hi } => {
                if !(theta > lo && theta < hi) {
                    return (f64::NEG_INFINITY, 0.0, 0.0);
                }
                let w = hi - lo;
                let z = (theta - lo) / w;
                let v = (a - 1.0) * z.ln() + (b - 1.0) * (1.0 - z).ln() - ln_beta(a, b) - w.ln();
                let d1 = ((a - 1.0) / z - (b - 1.0) / (1.0 - z)) / w;
                let d2 = (-(a - 1.0) / (z * z) - (b - 1.0) / ((1.0 - z) * (1.0 - z))) / (w * w);
                (v, d1, d2)
            }
            Prior::Flat => (0.0, 0.0, 0.0),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<f64> {
        match *self {
            Prior::Gamma { shape, mean } => Gamma::new(shape, mean / shape).ok().map(|g| g.sample(rng)),
            Prior::Beta { a, b, lo, hi } => Beta::new(a, b).ok().map(|d| lo + (hi - lo) * d.sample(rng)),
            Prior::Flat => None,
        }
    }
}

/// Derivatives of a summed log term with respect to the free parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LogTerm {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Diagonal of the Hessian (the terms are separable).
    pub hess_diag: Vec<f64>,
}

/// Ordered parameter vector with transforms and priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpace {
    params: Vec<Parameter>,
}

impl ParameterSpace {
    pub fn new(params: Vec<Parameter>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for p in &params {
            if !seen.insert(p.name.as_str()) {
                return Err(Error::Config(format!("duplicate parameter `{}`", p.name)));
            }
            p.transform.validate(&p.name)?;
            p.prior.validate(&p.name)?;
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Indices (into the full parameter vector) of the free parameters.
    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.params.len()).filter(|&i| self.params[i].is_free()).collect()
    }

    pub fn free_names(&self) -> Vec<String> {
        self.params.iter().filter(|p| p.is_free()).map(|p| p.name.clone()).collect()
    }

    /// Number of free parameters.
    pub fn n_free(&self) -> usize {
        self.params.iter().filter(|p| p.is_free()).count()
    }

    pub fn set_parameter(&mut self, param: Parameter) -> Result<()> {
        param.transform.validate(&param.name)?;
        param.prior.validate(&param.name)?;
        match self.index_of(&param.name) {
            Some(i) => self.params[i] = param,
            None => return Err(Error::Config(format!("unknown parameter `{}`", param.name))),
        }
        Ok(())
    }

    /// Full physical vector -> unconstrained vector of the free parameters.
    pub fn to_unconstrained(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_len(theta.len())?;
        let mut eta = Vec::with_capacity(self.n_free());
        for (p, &t) in self.params.iter().zip(theta) {
            if let Some(e) = p.transform.to_unconstrained(&p.name, t)? {
                eta.push(e);
            }
        }
        Ok(eta)
    }

    /// Unconstrained vector -> full physical vector (fixed values filled in).
    pub fn from_unconstrained(&self, eta: &[f64]) -> Vec<f64> {
        let mut it = eta.iter();
        self.params
            .iter()
            .map(|p| match p.transform {
                Transform::Fixed { value } => value,
                t => t.from_unconstrained(*it.next().expect("eta shorter than the free parameter count")),
            })
            .collect()
    }

    /// Diagonal Jacobian `d theta_i / d eta_i` and second derivatives, per free parameter.
    pub fn jacobian(&self, eta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        self.free_transforms().zip(eta).map(|(t, &e)| t.derivatives(e)).unzip()
    }

    /// `ln |det J|` with its gradient and Hessian diagonal.
    pub fn log_jacobian(&self, eta: &[f64]) -> LogTerm {
        let mut out = LogTerm { value: 0.0, grad: Vec::with_capacity(eta.len()), hess_diag: Vec::with_capacity(eta.len()) };
        for (t, &e) in self.free_transforms().zip(eta) {
            let (v, d1, d2) = t.log_jacobian(e);
            out.value += v;
            out.grad.push(d1);
            out.hess_diag.push(d2);
        }
        out
    }

    /// Log prior of the full physical vector, with derivatives with respect
    /// to the free parameters (in theta space).
    pub fn log_prior(&self, theta: &[f64]) -> LogTerm {
        let n = self.n_free();
        let mut out = LogTerm { value: 0.0, grad: Vec::with_capacity(n), hess_diag: Vec::with_capacity(n) };
        for (p, &t) in self.params.iter().zip(theta) {
            if !p.is_free() {
                continue;
            }
            let (v, d1, d2) = p.prior.log_density(t);
            out.value += v;
            out.grad.push(d1);
            out.hess_diag.push(d2);
        }
        out
    }

    /// Draw a full physical vector from the priors. Parameters with a flat
    /// prior take `fallback[i]`.
    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R, fallback: &[f64]) -> Vec<f64> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| match p.transform {
                Transform::Fixed { value } => value,
                _ => p.prior.sample(rng).unwrap_or(fallback[i]),
            })
            .collect()
    }

    fn free_transforms(&self) -> impl Iterator<Item = &Transform> {
        self.params.iter().filter(|p| p.is_free()).map(|p| &p.transform)
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n == self.params.len() {
            Ok(())
        } else {
            Err(Error::Dimension(format!("expected {} parameters, got {n}", self.params.len())))
        }
    }
}

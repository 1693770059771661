//! Bayesian calibration of linear Gaussian state-space models built from
//! RC thermal networks.
//!
//! The crate provides:
//!
//! * [`model`]: thermal network structures, built-in three/four-state
//!   building models and exact discretization with parameter derivatives;
//! * [`filter`]: a square-root Kalman filter returning the log-likelihood,
//!   its exact gradient and a Gauss-Newton curvature approximation;
//! * [`param`] and [`posterior`]: transforms, priors, the unconstrained
//!   log-posterior and Newton-type point estimation;
//! * [`sampler`]: a Newton-preconditioned Metropolis-Hastings sampler and
//!   a random-walk baseline;
//! * [`diagnostics`] and [`selection`]: convergence statistics, residual
//!   whiteness checks, information criteria, profile likelihood and
//!   predictive simulation;
//! * [`synth`]: synthetic data generation.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod filter;
pub mod linalg;
pub mod model;
pub mod param;
pub mod posterior;
pub mod sampler;
pub mod selection;
pub mod synth;

/// Library version.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use data::Dataset;
pub use error::{Error, Result};
pub use filter::{run_filter, FilterInit, FilterOptions, FilterRun};
pub use model::{m3, m4, BuiltinModel, DiscreteModel, Hold, StateSpaceModel, ThermalNetwork, ThermalNetworkSpec};
pub use param::{Parameter, ParameterSpace, Prior, Transform};
pub use posterior::{Evaluation, Mode, Posterior, Target};
pub use sampler::{ChainSet, SamplerConfig};

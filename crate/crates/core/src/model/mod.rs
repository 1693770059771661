//! Continuous-time state-space structures and their discretization.

mod builtin;
mod discrete;
mod network;

use std::fmt::Debug;

use nalgebra::{DMatrix, DVector};

pub use builtin::{m3, m4, BuiltinModel, CAPACITY_SCALE};
pub use discrete::{discretize, discretize_with_derivatives, foh_alpha, DiscreteModel, DiscretePartials, Hold};
pub use network::{EdgeSpec, GainSpec, NodeSpec, ThermalNetwork, ThermalNetworkSpec};

use crate::error::Result;

/// Matrices of `dx = A x dt + B u dt`, `y = C x`, together with the upper
/// triangular square roots of the discrete noise covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousMatrices {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub sw: DMatrix<f64>,
    pub sv: DMatrix<f64>,
}

impl ContinuousMatrices {
    pub fn is_zero(&self) -> bool {
        [&self.a, &self.b, &self.c, &self.sw, &self.sv]
            .iter()
            .all(|m| m.iter().all(|&v| v == 0.0))
    }
}

/// A parametric linear time-invariant model.
///
/// Evaluators are pure functions of the parameter vector.
pub trait StateSpaceModel: Send + Sync + Debug {
    fn n_states(&self) -> usize;
    fn input_names(&self) -> &[String];
    fn output_names(&self) -> &[String];
    fn param_names(&self) -> &[String];

    fn n_inputs(&self) -> usize {
        self.input_names().len()
    }

    fn n_outputs(&self) -> usize {
        self.output_names().len()
    }

    fn matrices(&self, theta: &[f64]) -> Result<ContinuousMatrices>;

    /// Analytic partial derivatives of every matrix with respect to `theta[index]`.
    fn partials(&self, theta: &[f64], index: usize) -> Result<ContinuousMatrices>;

    /// Prior mean of the first state; states without an initial-condition
    /// parameter take the first output measurement.
    fn initial_mean(&self, theta: &[f64], first_output: &[f64]) -> DVector<f64>;

    fn initial_mean_partial(&self, theta: &[f64], index: usize) -> DVector<f64>;

    fn has_initial_parameter(&self, state: usize) -> bool;
}

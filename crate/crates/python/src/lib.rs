//! Python bindings: likelihood evaluation, optimization, sampling and
//! diagnostics for the built-in RC models.
//!
//! Arrays cross the boundary as nested lists: a sample set is
//! `chains x draws x parameters` in physical units.

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thermocal::diagnostics::split_rhat_ess;
use thermocal::posterior::{multi_start, OptimizeOptions};
use thermocal::sampler::{prior_initial_points, run_chains, SamplerConfig, StepSize};
use thermocal::synth::{building_signals, generate, Scenario};
use thermocal::{m3, m4, BuiltinModel, Dataset, Error, Hold, Mode, Posterior, StateSpaceModel};

fn to_py(e: Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn builtin(name: &str) -> PyResult<BuiltinModel> {
    match name.to_ascii_uppercase().as_str() {
        "M3" => Ok(m3()),
        "M4" => Ok(m4()),
        other => Err(PyValueError::new_err(format!("unknown model `{other}` (expected M3 or M4)"))),
    }
}

/// A built-in model bound to a measurement record.
#[pyclass]
struct Calibration {
    posterior: Posterior,
    nominal: Vec<f64>,
}

#[pymethods]
impl Calibration {
    #[new]
    #[pyo3(signature = (model, data_csv, init_sd = 1.0))]
    fn new(model: &str, data_csv: &str, init_sd: f64) -> PyResult<Self> {
        let b = builtin(model)?;
        let data = Dataset::read_csv(data_csv, b.network.input_names(), b.network.output_names()).map_err(to_py)?;
        let mut posterior = Posterior::new(Arc::new(b.network), b.space, Arc::new(data)).map_err(to_py)?;
        posterior.init_sd = init_sd;
        Ok(Self { posterior, nominal: b.nominal })
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.posterior.space.names()
    }

    #[getter]
    fn free_names(&self) -> Vec<String> {
        self.posterior.space.free_names()
    }

    #[getter]
    fn nominal(&self) -> Vec<f64> {
        self.nominal.clone()
    }

    #[getter]
    fn n_samples(&self) -> usize {
        self.posterior.data.len()
    }

    fn log_likelihood(&self, theta: Vec<f64>) -> PyResult<f64> {
        self.check(&theta)?;
        self.posterior.log_likelihood(&theta).map_err(to_py)
    }

    /// Log posterior density of the unconstrained parameters and its gradient.
    fn log_posterior(&self, theta: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
        use thermocal::Target;
        self.check(&theta)?;
        let eta = self.posterior.space.to_unconstrained(&theta).map_err(to_py)?;
        let e = self.posterior.evaluate(&eta).map_err(to_py)?;
        Ok((e.log_density, e.grad.iter().copied().collect()))
    }

    /// Multi-start maximum likelihood; returns the best `(theta, loglik)`.
    #[pyo3(signature = (starts = 4, seed = 0))]
    fn maximize(&self, py: Python<'_>, starts: usize, seed: u64) -> PyResult<(Vec<f64>, f64)> {
        let target = self.posterior.clone().with_mode(Mode::Likelihood);
        let space = &self.posterior.space;
        let results = py.detach(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            multi_start(&target, space, &self.nominal, starts.max(1), &mut rng, &OptimizeOptions::default())
        });
        results
            .into_iter()
            .filter_map(|s| s.result.ok())
            .max_by(|a, b| a.evaluation.log_lik.total_cmp(&b.evaluation.log_lik))
            .map(|r| (space.from_unconstrained(&r.eta), r.evaluation.log_lik))
            .ok_or_else(|| PyRuntimeError::new_err("every optimization start failed"))
    }

    /// Runs the second-order Metropolis-Hastings sampler from prior draws.
    #[pyo3(signature = (iterations = 2000, chains = 4, seed = 0, step = 0.3))]
    fn sample(&self, py: Python<'_>, iterations: usize, chains: usize, seed: u64, step: f64) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let space = &self.posterior.space;
        let initial = prior_initial_points(space, &self.nominal, chains, seed).map_err(to_py)?;
        let config = SamplerConfig { iterations, step: StepSize::Scalar(step), seed, ..Default::default() };
        let set = py.detach(|| run_chains(&self.posterior, &config, &initial)).map_err(to_py)?;
        Ok(set
            .chains
            .iter()
            .map(|c| (0..c.len()).map(|i| space.from_unconstrained(c.draw(i))).collect())
            .collect())
    }
}

impl Calibration {
    fn check(&self, theta: &[f64]) -> PyResult<()> {
        let n = self.posterior.space.len();
        if theta.len() != n {
            return Err(PyValueError::new_err(format!("theta has {} entries, model has {n}", theta.len())));
        }
        Ok(())
    }
}

/// Split-R̂ and ESS of every parameter of a `chains x draws x parameters` sample set.
#[pyfunction]
#[pyo3(signature = (samples, burn_in = 0))]
fn diagnose(samples: Vec<Vec<Vec<f64>>>, burn_in: usize) -> PyResult<Vec<(f64, f64)>> {
    let dim = samples.first().and_then(|c| c.first()).map_or(0, Vec::len);
    if samples.iter().flatten().any(|d| d.len() != dim) {
        return Err(PyValueError::new_err("every draw must have the same number of parameters"));
    }
    Ok((0..dim)
        .map(|j| {
            let series: Vec<Vec<f64>> =
                samples.iter().map(|c| c.iter().skip(burn_in).map(|d| d[j]).collect()).collect();
            let r = split_rhat_ess(&series);
            (r.rhat, r.ess)
        })
        .collect())
}

/// Writes a synthetic building experiment from the nominal parameters of a
/// built-in model; returns the true parameter vector.
#[pyfunction]
#[pyo3(signature = (model, path, n_steps = 2000, dt = 600.0, seed = 0))]
fn synthesize(model: &str, path: &str, n_steps: usize, dt: f64, seed: u64) -> PyResult<Vec<f64>> {
    let b = builtin(model)?;
    let scenario = Scenario {
        theta: b.nominal.clone(),
        signals: building_signals(),
        n_steps,
        dt,
        hold: Hold::First,
        identification_fraction: 14.0 / 24.0,
        seed,
    };
    let syn = generate(&b.network, &scenario).map_err(to_py)?;
    syn.full.write_csv(path).map_err(to_py)?;
    Ok(syn.theta)
}

#[pymodule]
fn thermocal_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", thermocal::VERSION)?;
    m.add_class::<Calibration>()?;
    m.add_function(wrap_pyfunction!(diagnose, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    Ok(())
}

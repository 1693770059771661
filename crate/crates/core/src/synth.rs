//! Synthetic experiments: input signal generators and forward simulation
//! of the stochastic discrete model.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{discretize, DiscreteModel, Hold, StateSpaceModel};

/// Input signal generator. Times are seconds from the start of the record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Signal {
    Constant { value: f64 },
    Sine { mean: f64, amplitude: f64, period: f64, phase: f64 },
    /// Positive half of a sine, e.g. a daily irradiance profile.
    ClippedSine { amplitude: f64, period: f64, phase: f64 },
    /// Binary sequence whose dwell times are log-uniform in
    /// `[min_dwell, max_dwell]` seconds.
    Prbs { low: f64, high: f64, min_dwell: f64, max_dwell: f64 },
}

impl Signal {
    /// Sample the signal at `t_k = k dt`, `k = 0..n`.
    pub fn generate<R: Rng + ?Sized>(&self, n: usize, dt: f64, rng: &mut R) -> Result<Vec<f64>> {
        let t = |k: usize| k as f64 * dt;
        let tau = std::f64::consts::TAU;
        match *self {
            Signal::Constant { value } => Ok(vec![value; n]),
            Signal::Sine { mean, amplitude, period, phase } => {
                Ok((0..n).map(|k| mean + amplitude * (tau * t(k) / period + phase).sin()).collect())
            }
            Signal::ClippedSine { amplitude, period, phase } => {
                Ok((0..n).map(|k| (amplitude * (tau * t(k) / period + phase).sin()).max(0.0)).collect())
            }
            Signal::Prbs { low, high, min_dwell, max_dwell } => {
                if !(min_dwell > 0.0 && max_dwell >= min_dwell) {
                    return Err(Error::Config("PRBS dwell bounds require 0 < min_dwell <= max_dwell".into()));
                }
                let switches = prbs_dwell_times(rng, min_dwell, max_dwell, n as f64 * dt);
                let mut level = rng.gen_bool(0.5);
                let mut next = 0;
                let mut boundary = switches.first().copied().unwrap_or(f64::INFINITY);
                let mut out = Vec::with_capacity(n);
                for k in 0..n {
                    while t(k) >= boundary {
                        level = !level;
                        next += 1;
                        boundary += switches.get(next).copied().unwrap_or(f64::INFINITY);
                    }
                    out.push(if level { high } else { low });
                }
                Ok(out)
            }
        }
    }
}

/// Log-uniform dwell durations covering at least `horizon` seconds.
pub fn prbs_dwell_times<R: Rng + ?Sized>(rng: &mut R, min_dwell: f64, max_dwell: f64, horizon: f64) -> Vec<f64> {
    let (lo, hi) = (min_dwell.ln(), max_dwell.ln());
    let mut out = Vec::new();
    let mut total = 0.0;
    while total < horizon {
        let d = if hi > lo { rng.gen_range(lo..hi).exp() } else { min_dwell };
        total += d;
        out.push(d);
    }
    out
}

/// Simulate `y_k = C x_k + v_k`, `x_{k+1} = Ad x_k + Bd0 (u_k + alpha dt) -
/// Bd1 alpha + w_k` with `w = Sw^T z`, `v = Sv^T z`. Without `rng` the
/// noise terms are omitted. Returns outputs row-major `N x n_y`.
pub fn simulate_discrete<R: Rng + ?Sized>(
    dm: &DiscreteModel,
    x0: &DVector<f64>,
    inputs: &[f64],
    n_steps: usize,
    mut rng: Option<&mut R>,
) -> Result<Vec<f64>> {
    let n = dm.n_states();
    let nu = dm.n_inputs();
    let p = dm.n_outputs();
    if inputs.len() != n_steps * nu || x0.len() != n {
        return Err(Error::Dimension("simulation inputs do not match the model".into()));
    }
    let swt = dm.sw.transpose();
    let svt = dm.sv.transpose();
    let mut x = x0.clone();
    let mut out = Vec::with_capacity(n_steps * p);
    for k in 0..n_steps {
        let mut y = &dm.c * &x;
        if let Some(r) = rng.as_deref_mut() {
            let z = DVector::from_fn(p, |_, _| r.sample::<f64, _>(StandardNormal));
            y += &svt * z;
        }
        out.extend(y.iter());
        if k + 1 == n_steps {
            break;
        }
        let u = DVector::from_column_slice(&inputs[k * nu..(k + 1) * nu]);
        let alpha = match dm.hold {
            Hold::First => (DVector::from_column_slice(&inputs[(k + 1) * nu..(k + 2) * nu]) - &u) / dm.dt,
            Hold::Zero => DVector::zeros(nu),
        };
        x = &dm.ad * &x + &dm.bd0 * (&u + &alpha * dm.dt) - &dm.bd1 * &alpha;
        if let Some(r) = rng.as_deref_mut() {
            let z = DVector::from_fn(n, |_, _| r.sample::<f64, _>(StandardNormal));
            x += &swt * z;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: k });
        }
    }
    Ok(out)
}

/// Initial state for a simulation: steady state for the first input
/// sample, with parameterized initial conditions taken from `theta`.
pub fn initial_state(model: &dyn StateSpaceModel, theta: &[f64], u0: &[f64]) -> Result<DVector<f64>> {
    let m = model.matrices(theta)?;
    let b = &m.b * DVector::from_column_slice(u0);
    let ss = m
        .a
        .clone()
        .lu()
        .solve(&(-b))
        .ok_or_else(|| Error::Model("state matrix is singular".into()))?;
    let from_theta = model.initial_mean(theta, &[0.0]);
    Ok(DVector::from_fn(model.n_states(), |i, _| {
        if model.has_initial_parameter(i) {
            from_theta[i]
        } else {
            ss[i]
        }
    }))
}

fn check_stable(model: &dyn StateSpaceModel, theta: &[f64]) -> Result<()> {
    let a = model.matrices(theta)?.a;
    let worst = a.complex_eigenvalues().iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    if worst < 0.0 {
        Ok(())
    } else {
        Err(Error::Model(format!("state matrix is not stable at the true parameters (max Re lambda = {worst:.3e})")))
    }
}

/// Sample the input signals and simulate the model with noise.
pub fn simulate<R: Rng + ?Sized>(
    model: &dyn StateSpaceModel,
    theta: &[f64],
    signals: &[Signal],
    n_steps: usize,
    dt: f64,
    hold: Hold,
    rng: &mut R,
) -> Result<Dataset> {
    if signals.len() != model.n_inputs() {
        return Err(Error::Config(format!(
            "model has {} inputs, {} signals given",
            model.n_inputs(),
            signals.len()
        )));
    }
    check_stable(model, theta)?;
    let nu = signals.len();
    let columns = signals.iter().map(|s| s.generate(n_steps, dt, rng)).collect::<Result<Vec<_>>>()?;
    let mut inputs = Vec::with_capacity(n_steps * nu);
    for k in 0..n_steps {
        inputs.extend(columns.iter().map(|c| c[k]));
    }
    let dm = discretize(model, theta, dt, hold)?;
    let x0 = initial_state(model, theta, &inputs[..nu])?;
    let outputs = simulate_discrete(&dm, &x0, &inputs, n_steps, Some(rng))?;
    let time = (0..n_steps).map(|k| k as f64 * dt).collect();
    Dataset::new(time, model.input_names().to_vec(), inputs, model.output_names().to_vec(), outputs)
}

/// A reproducible synthetic identification/validation experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub theta: Vec<f64>,
    pub signals: Vec<Signal>,
    pub n_steps: usize,
    pub dt: f64,
    #[serde(default)]
    pub hold: Hold,
    /// Share of the record used for identification.
    #[serde(default = "default_identification_fraction")]
    pub identification_fraction: f64,
    pub seed: u64,
}

fn default_identification_fraction() -> f64 {
    14.0 / 24.0
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub full: Dataset,
    pub identification: Dataset,
    pub validation: Dataset,
    pub theta: Vec<f64>,
}

pub fn generate(model: &dyn StateSpaceModel, scenario: &Scenario) -> Result<Synthetic> {
    let f = scenario.identification_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::Config("identification_fraction must be in (0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let full = simulate(model, &scenario.theta, &scenario.signals, scenario.n_steps, scenario.dt, scenario.hold, &mut rng)?;
    let cut = (f * scenario.n_steps as f64).round() as usize;
    let (identification, validation) = full.split_at(cut)?;
    Ok(Synthetic { full, identification, validation, theta: scenario.theta.clone() })
}

/// Excitation resembling a building experiment for models with inputs
/// `[T_o, T_z, Q_gh, Q_h]`: daily outdoor and neighbour temperature
/// cycles, clipped-sine irradiance and a binary heating sequence.
pub fn building_signals() -> Vec<Signal> {
    let day = 86_400.0;
    vec![
        Signal::Sine { mean: 5.0, amplitude: 4.0, period: day, phase: -1.0 },
        Signal::Sine { mean: 28.0, amplitude: 0.8, period: day, phase: 0.5 },
        Signal::ClippedSine { amplitude: 400.0, period: day, phase: -1.3 },
        Signal::Prbs { low: 0.0, high: 1500.0, min_dwell: 3_600.0, max_dwell: 2.0 * day },
    ]
}

//! Independent reference implementations and generators shared by the
//! integration tests and the acceptance runner.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use thermocal::model::{DiscretePartials, EdgeSpec, GainSpec, NodeSpec};
use thermocal::synth::{building_signals, generate, Scenario};
use thermocal::{m3, BuiltinModel, Dataset, DiscreteModel, Hold, ThermalNetwork, ThermalNetworkSpec};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `|a - b| / max(|b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}

/// Frobenius-norm relative error of two matrices.
pub fn mat_rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    (a - b).norm() / b.norm().max(floor)
}

fn random_upper<R: Rng>(rng: &mut R, n: usize, diag: (f64, f64), off: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            rng.gen_range(diag.0..diag.1)
        } else if i < j {
            rng.gen_range(-off..off)
        } else {
            0.0
        }
    })
}

/// A random stable discrete model with positive-definite noise factors.
pub fn random_discrete<R: Rng>(rng: &mut R, n: usize, nu: usize, p: usize, dt: f64, hold: Hold) -> DiscreteModel {
    let a: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let norm = a.clone().svd(false, false).singular_values.max().max(1e-3_f64);
    let ad = a * (rng.gen_range(0.3..0.95) / norm);
    let bd0 = DMatrix::from_fn(n, nu, |_, _| rng.gen_range(-1.0..1.0));
    let bd1 = DMatrix::from_fn(n, nu, |_, _| rng.gen_range(-0.3..0.3));
    let c = DMatrix::from_fn(p, n, |_, _| rng.gen_range(-1.0..1.0));
    let sw = random_upper(rng, n, (0.05, 0.5), 0.2);
    let sv = random_upper(rng, p, (0.05, 0.5), 0.2);
    DiscreteModel::from_matrices(ad, bd0, bd1, c, sw, sv, dt, hold).unwrap()
}

/// A random direction in the space of discrete matrices, used as the
/// partial derivative of a fictitious parameter.
pub fn random_partials<R: Rng>(rng: &mut R, dm: &DiscreteModel) -> DiscretePartials {
    let (n, nu, p) = (dm.n_states(), dm.n_inputs(), dm.n_outputs());
    let mut g = |r: usize, c: usize, s: f64| DMatrix::from_fn(r, c, |_, _| rng.gen_range(-s..s));
    DiscretePartials {
        ad: g(n, n, 0.1),
        bd0: g(n, nu, 0.5),
        bd1: g(n, nu, 0.2),
        c: g(p, n, 0.5),
        sw: g(n, n, 0.1).upper_triangle(),
        sv: g(p, p, 0.1).upper_triangle(),
    }
}

/// `dm + h * d` for every matrix.
pub fn perturbed(dm: &DiscreteModel, d: &DiscretePartials, h: f64) -> DiscreteModel {
    DiscreteModel::from_matrices(
        &dm.ad + &d.ad * h,
        &dm.bd0 + &d.bd0 * h,
        &dm.bd1 + &d.bd1 * h,
        &dm.c + &d.c * h,
        &dm.sw + &d.sw * h,
        &dm.sv + &d.sv * h,
        dm.dt,
        dm.hold,
    )
    .unwrap()
}

fn slope(data: &Dataset, k: usize, hold: Hold) -> Vec<f64> {
    let u = data.input(k);
    match hold {
        Hold::First if k + 1 < data.len() => {
            data.input(k + 1).iter().zip(u).map(|(b, a)| (b - a) / data.dt()).collect()
        }
        _ => vec![0.0; u.len()],
    }
}

/// Simulate the discrete model with smooth random inputs.
pub fn simulate_discrete<R: Rng>(rng: &mut R, dm: &DiscreteModel, steps: usize) -> Dataset {
    let (n, nu, p) = (dm.n_states(), dm.n_inputs(), dm.n_outputs());
    let dt = dm.dt;
    let phases: Vec<f64> = (0..nu).map(|_| rng.gen_range(0.0..6.0)).collect();
    let mut inputs = Vec::with_capacity(steps * nu);
    for k in 0..steps {
        for (j, ph) in phases.iter().enumerate() {
            inputs.push((0.05 * (j + 1) as f64 * k as f64 + ph).sin() + 0.1 * rng.sample::<f64, _>(StandardNormal));
        }
    }
    let names_u: Vec<String> = (0..nu).map(|j| format!("u{j}")).collect();
    let names_y: Vec<String> = (0..p).map(|j| format!("y{j}")).collect();
    let time: Vec<f64> = (0..steps).map(|k| k as f64 * dt).collect();
    let shell = Dataset::new(time.clone(), names_u.clone(), inputs.clone(), names_y.clone(), vec![0.0; steps * p]).unwrap();
    let mut x = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut outputs = Vec::with_capacity(steps * p);
    for k in 0..steps {
        let v = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = &dm.c * &x + dm.sv.transpose() * v;
        outputs.extend(y.iter());
        let alpha = DVector::from_vec(slope(&shell, k, dm.hold));
        let u = DVector::from_column_slice(shell.input(k));
        let ub = &u + &alpha * dt;
        let w = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        x = &dm.ad * &x + &dm.bd0 * ub - &dm.bd1 * alpha + dm.sw.transpose() * w;
    }
    Dataset::new(time, names_u, inputs, names_y, outputs).unwrap()
}

/// Output of the covariance-form reference filter.
pub struct OracleRun {
    pub loglik: f64,
    pub log_densities: Vec<f64>,
    pub filtered_mean: DVector<f64>,
    pub filtered_cov: DMatrix<f64>,
}

/// Conventional Kalman filter on full covariance matrices (Joseph-form
/// update). Noise covariances are `Sw^T Sw` and `Sv^T Sv`.
pub fn kalman_oracle(dm: &DiscreteModel, data: &Dataset, x0: &DVector<f64>, p0: &DMatrix<f64>) -> OracleRun {
    let n = dm.n_states();
    let p = dm.n_outputs();
    let q = dm.sw.transpose() * &dm.sw;
    let r = dm.sv.transpose() * &dm.sv;
    let eye = DMatrix::<f64>::identity(n, n);
    let mut x = x0.clone();
    let mut cov = p0.clone();
    let mut out = OracleRun {
        loglik: 0.0,
        log_densities: Vec::new(),
        filtered_mean: x.clone(),
        filtered_cov: cov.clone(),
    };
    for k in 0..data.len() {
        let y = DVector::from_column_slice(data.output(k));
        let s = &dm.c * &cov * dm.c.transpose() + &r;
        let s_inv = s.clone().try_inverse().unwrap();
        let e = y - &dm.c * &x;
        let ld = -0.5 * (p as f64 * LN_2PI + s.determinant().ln() + (e.transpose() * &s_inv * &e)[(0, 0)]);
        out.loglik += ld;
        out.log_densities.push(ld);
        let gain = &cov * dm.c.transpose() * &s_inv;
        let xf = &x + &gain * e;
        let ikc = &eye - &gain * &dm.c;
        let pf = &ikc * &cov * ikc.transpose() + &gain * &r * gain.transpose();
        out.filtered_mean = xf.clone();
        out.filtered_cov = pf.clone();
        if k + 1 == data.len() {
            break;
        }
        let alpha = DVector::from_vec(slope(data, k, dm.hold));
        let ub = DVector::from_column_slice(data.input(k)) + &alpha * dm.dt;
        x = &dm.ad * xf + &dm.bd0 * ub - &dm.bd1 * alpha;
        cov = &dm.ad * pf * dm.ad.transpose() + &q;
        cov = (&cov + cov.transpose()) * 0.5;
    }
    out
}

/// A random connected RC network with its parameter names and values.
pub struct RandomNetwork {
    pub network: ThermalNetwork,
    pub names: Vec<String>,
    pub theta: Vec<f64>,
}

pub fn random_network<R: Rng>(rng: &mut R) -> RandomNetwork {
    let n = rng.gen_range(1..=4);
    let mut names = Vec::new();
    let mut theta = Vec::new();
    let mut param = |name: String, value: f64, names: &mut Vec<String>| {
        names.push(name.clone());
        theta.push(value);
        name
    };
    let mut nodes = Vec::new();
    for i in 0..n {
        let c = param(format!("C{i}"), rng.gen_range(0.5..2.0), &mut names);
        let s = param(format!("s{i}"), rng.gen_range(0.05..0.3), &mut names);
        let initial = if i == 0 { Some(param(format!("x{i}0"), rng.gen_range(15.0..25.0), &mut names)) } else { None };
        nodes.push(NodeSpec { name: format!("x{i}"), capacity: c, process_noise: s, initial });
    }
    let mut edges = Vec::new();
    let r = param("Ro".into(), rng.gen_range(0.5..2.0), &mut names);
    edges.push(EdgeSpec { resistance: r, from: "T_o".into(), to: "x0".into() });
    for i in 1..n {
        let r = param(format!("R{}{}", i - 1, i), rng.gen_range(0.5..2.0), &mut names);
        edges.push(EdgeSpec { resistance: r, from: format!("x{}", i - 1), to: format!("x{i}") });
    }
    for i in 0..n {
        for j in i + 2..n {
            if rng.gen_bool(0.3) {
                let r = param(format!("R{i}{j}"), rng.gen_range(0.5..2.0), &mut names);
                edges.push(EdgeSpec { resistance: r, from: format!("x{i}"), to: format!("x{j}") });
            }
        }
    }
    let mut boundaries = vec!["T_o".to_string()];
    if rng.gen_bool(0.5) {
        let node = rng.gen_range(0..n);
        let r = param("Rz".into(), rng.gen_range(0.5..2.0), &mut names);
        edges.push(EdgeSpec { resistance: r, from: "T_z".into(), to: format!("x{node}") });
        boundaries.push("T_z".into());
    }
    let g = param("g".into(), rng.gen_range(0.3..1.5), &mut names);
    let gains = vec![
        GainSpec { signal: "Q_a".into(), node: format!("x{}", rng.gen_range(0..n)), gain: Some(g) },
        GainSpec { signal: "Q_b".into(), node: format!("x{}", rng.gen_range(0..n)), gain: None },
    ];
    let sv = param("sv".into(), rng.gen_range(0.05..0.3), &mut names);
    let spec = ThermalNetworkSpec {
        nodes,
        edges,
        boundaries,
        heat_inputs: vec!["Q_a".into(), "Q_b".into()],
        gains,
        outputs: vec![format!("x{}", rng.gen_range(0..n))],
        output_signal: "y".into(),
        measurement_noise: sv,
        capacity_scale: 1.0,
    };
    let network = ThermalNetwork::new(spec, &names).unwrap();
    RandomNetwork { network, names, theta }
}

/// Synthetic M3 experiment: building-like excitation at the nominal
/// parameters, 10-minute sampling.
pub fn m3_synthetic(n_steps: usize, seed: u64) -> (BuiltinModel, Dataset) {
    let b = m3();
    let scenario = Scenario {
        theta: b.nominal.clone(),
        signals: building_signals(),
        n_steps,
        dt: 600.0,
        hold: Hold::First,
        identification_fraction: 0.5,
        seed,
    };
    let syn = generate(&b.network, &scenario).unwrap();
    (b, syn.full)
}

/// Central difference of `f` along coordinate `i` with absolute step `h`.
pub fn central<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], i: usize, h: f64) -> f64 {
    let mut a = x.to_vec();
    let mut b = x.to_vec();
    a[i] += h;
    b[i] -= h;
    (f(&a) - f(&b)) / (2.0 * h)
}

/// Two-node network whose second node relaxes quickly to a boundary and is
/// only loosely coupled to the measured node, so that its process noise
/// `s_b` barely shows in the output. Hourly sampling.
pub fn weak_noise_problem(seed: u64) -> (thermocal::Posterior, Vec<f64>) {
    use std::sync::Arc;
    use thermocal::synth::Signal;
    use thermocal::{Parameter, ParameterSpace, Posterior, Prior, Transform};

    let spec = ThermalNetworkSpec {
        nodes: vec![
            NodeSpec { name: "a".into(), capacity: "C_a".into(), process_noise: "s_a".into(), initial: None },
            NodeSpec { name: "b".into(), capacity: "C_b".into(), process_noise: "s_b".into(), initial: None },
        ],
        edges: vec![
            EdgeSpec { resistance: "R_a".into(), from: "T_o".into(), to: "a".into() },
            EdgeSpec { resistance: "R_ab".into(), from: "a".into(), to: "b".into() },
            EdgeSpec { resistance: "R_zb".into(), from: "T_z".into(), to: "b".into() },
        ],
        boundaries: vec!["T_o".into(), "T_z".into()],
        heat_inputs: vec!["Q".into()],
        gains: vec![GainSpec { signal: "Q".into(), node: "a".into(), gain: None }],
        outputs: vec!["a".into()],
        output_signal: "y".into(),
        measurement_noise: "s_v".into(),
        capacity_scale: 1.0,
    };
    let noise = Prior::Gamma { shape: 2.0, mean: 0.03 };
    let space = ParameterSpace::new(vec![
        Parameter::new("R_a", Transform::Log, Prior::Flat),
        Parameter::new("C_a", Transform::Log, Prior::Flat),
        Parameter::new("R_ab", Transform::Fixed { value: 2.0 }, Prior::Flat),
        Parameter::new("C_b", Transform::Fixed { value: 1.0 }, Prior::Flat),
        Parameter::new("R_zb", Transform::Fixed { value: 1.0 }, Prior::Flat),
        Parameter::new("s_a", Transform::Log, noise),
        Parameter::new("s_b", Transform::Log, noise),
        Parameter::new("s_v", Transform::Log, noise),
    ])
    .unwrap();
    let theta = vec![1.0, 2.0, 2.0, 1.0, 1.0, 0.05, 0.03, 0.05];
    let network = ThermalNetwork::new(spec, &space.names()).unwrap();
    let scenario = Scenario {
        theta: theta.clone(),
        signals: vec![
            Signal::Sine { mean: 5.0, amplitude: 4.0, period: 24.0, phase: 0.0 },
            Signal::Sine { mean: 20.0, amplitude: 1.0, period: 24.0, phase: 1.0 },
            Signal::Prbs { low: 0.0, high: 10.0, min_dwell: 1.0, max_dwell: 24.0 },
        ],
        n_steps: 2000,
        dt: 1.0,
        hold: Hold::First,
        identification_fraction: 0.5,
        seed,
    };
    let syn = generate(&network, &scenario).unwrap();
    (Posterior::new(Arc::new(network), space, Arc::new(syn.full)).unwrap(), theta)
}

mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thermocal::model::{discretize, discretize_with_derivatives};
use thermocal::{Hold, StateSpaceModel};

/// Classical RK4 for `dx/dt = A x + B u(t)` over `[t0, t0 + span]`.
fn rk4<F: Fn(f64) -> DVector<f64>>(a: &DMatrix<f64>, b: &DMatrix<f64>, x: &DVector<f64>, u: F, t0: f64, span: f64, steps: usize) -> DVector<f64> {
    let h = span / steps as f64;
    let f = |t: f64, x: &DVector<f64>| a * x + b * u(t);
    let mut x = x.clone();
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        let k1 = f(t, &x);
        let k2 = f(t + h / 2.0, &(&x + &k1 * (h / 2.0)));
        let k3 = f(t + h / 2.0, &(&x + &k2 * (h / 2.0)));
        let k4 = f(t + h, &(&x + &k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    x
}

fn step(dm: &thermocal::DiscreteModel, x: &DVector<f64>, u0: &DVector<f64>, u1: &DVector<f64>) -> DVector<f64> {
    let alpha = match dm.hold {
        Hold::First => (u1 - u0) / dm.dt,
        Hold::Zero => DVector::zeros(u0.len()),
    };
    &dm.ad * x + &dm.bd0 * (u0 + &alpha * dm.dt) - &dm.bd1 * alpha
}

#[test]
fn derivatives_match_differences_of_discretized_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..50 {
        let net = random_network(&mut rng);
        let dt = rng.gen_range(0.2..2.0);
        let hold = if case % 2 == 0 { Hold::First } else { Hold::Zero };
        let indices: Vec<usize> = (0..net.theta.len()).collect();
        let dm = discretize_with_derivatives(&net.network, &net.theta, &indices, dt, hold).unwrap();
        for (i, d) in dm.partials.iter().enumerate() {
            let h = 1e-6 * net.theta[i].abs();
            let mut tp = net.theta.clone();
            let mut tm = net.theta.clone();
            tp[i] += h;
            tm[i] -= h;
            let p = discretize(&net.network, &tp, dt, hold).unwrap();
            let m = discretize(&net.network, &tm, dt, hold).unwrap();
            let pairs = [
                ("ad", &d.ad, &p.ad, &m.ad),
                ("bd0", &d.bd0, &p.bd0, &m.bd0),
                ("bd1", &d.bd1, &p.bd1, &m.bd1),
                ("c", &d.c, &p.c, &m.c),
                ("sw", &d.sw, &p.sw, &m.sw),
                ("sv", &d.sv, &p.sv, &m.sv),
            ];
            for (what, analytic, plus, minus) in pairs {
                let fd = (plus - minus) / (2.0 * h);
                let err = mat_rel_err(analytic, &fd, 1e-3);
                assert!(err < 1e-6, "case {case}, {}: d{what} rel err {err:e}", net.names[i]);
            }
        }
    }
}

#[test]
fn first_order_hold_is_exact_for_piecewise_linear_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..10 {
        let net = random_network(&mut rng);
        let dt = rng.gen_range(0.2..2.0);
        let cm = net.network.matrices(&net.theta).unwrap();
        let dm = discretize(&net.network, &net.theta, dt, Hold::First).unwrap();
        let nu = net.network.n_inputs();
        let n = net.network.n_states();
        let samples: Vec<DVector<f64>> = (0..6).map(|_| DVector::from_fn(nu, |_, _| rng.gen_range(-2.0..2.0))).collect();
        let mut xd = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let mut xc = xd.clone();
        for k in 0..5 {
            let (u0, u1) = (samples[k].clone(), samples[k + 1].clone());
            xc = rk4(&cm.a, &cm.b, &xc, |t| &u0 + (&u1 - &u0) * (t / dt), 0.0, dt, 400);
            xd = step(&dm, &xd, &samples[k], &samples[k + 1]);
        }
        assert!((&xd - &xc).norm() < 1e-9 * xc.norm().max(1.0), "{} vs {}", xd, xc);
    }
}

#[test]
fn zero_order_hold_is_exact_for_piecewise_constant_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let net = random_network(&mut rng);
    let dt = 0.7;
    let cm = net.network.matrices(&net.theta).unwrap();
    let dm = discretize(&net.network, &net.theta, dt, Hold::Zero).unwrap();
    let nu = net.network.n_inputs();
    let n = net.network.n_states();
    let u = DVector::from_fn(nu, |_, _| rng.gen_range(-2.0..2.0));
    let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let xc = rk4(&cm.a, &cm.b, &x0, |_| u.clone(), 0.0, dt, 400);
    let xd = step(&dm, &x0, &u, &u);
    assert!((&xd - &xc).norm() < 1e-10 * xc.norm().max(1.0));
}

fn sine_error(net: &RandomNetwork, dt: f64, hold: Hold) -> f64 {
    let cm = net.network.matrices(&net.theta).unwrap();
    let dm = discretize(&net.network, &net.theta, dt, hold).unwrap();
    let nu = net.network.n_inputs();
    let u = |t: f64| DVector::from_fn(nu, |j, _| (0.8 * t + j as f64).sin());
    let horizon = 8.0;
    let steps = (horizon / dt).round() as usize;
    let mut xd = DVector::zeros(net.network.n_states());
    for k in 0..steps {
        xd = step(&dm, &xd, &u(k as f64 * dt), &u((k + 1) as f64 * dt));
    }
    let xc = rk4(&cm.a, &cm.b, &DVector::zeros(net.network.n_states()), u, 0.0, horizon, 20_000);
    (xd - xc).norm()
}

#[test]
fn first_order_hold_converges_quadratically() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..5 {
        let net = random_network(&mut rng);
        let coarse = sine_error(&net, 0.4, Hold::First);
        let fine = sine_error(&net, 0.2, Hold::First);
        let ratio = coarse / fine;
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
        let zoh = sine_error(&net, 0.2, Hold::Zero);
        assert!(zoh > fine);
    }
}

mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thermocal::{run_filter, FilterInit, FilterOptions, Hold};

fn random_init<R: Rng>(rng: &mut R, n: usize) -> FilterInit {
    let x = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let p_sqrt = DMatrix::from_fn(n, n, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Equal => rng.gen_range(0.5..2.0),
        std::cmp::Ordering::Less => rng.gen_range(-0.3..0.3),
        _ => 0.0,
    });
    FilterInit { x, p_sqrt, dx: Vec::new() }
}

fn exact() -> FilterOptions {
    FilterOptions { with_derivatives: false, steady_state_tol: 0.0 }
}

#[test]
fn loglik_matches_covariance_filter_on_random_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..50 {
        let n = 1 + case % 4;
        let hold = if case % 2 == 0 { Hold::First } else { Hold::Zero };
        let dm = random_discrete(&mut rng, n, 2, 1, 0.5, hold);
        let data = simulate_discrete(&mut rng, &dm, 300);
        let init = random_init(&mut rng, n);
        let p0 = init.p_sqrt.transpose() * &init.p_sqrt;
        let oracle = kalman_oracle(&dm, &data, &init.x, &p0);
        for opts in [exact(), FilterOptions { with_derivatives: false, ..Default::default() }] {
            let run = run_filter(&dm, &data, &init, &opts).unwrap();
            assert!((run.loglik - oracle.loglik).abs() < 1e-8, "case {case}: {} vs {}", run.loglik, oracle.loglik);
        }
    }
}

#[test]
fn per_step_densities_and_final_state_match() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let dm = random_discrete(&mut rng, 3, 2, 2, 1.0, Hold::First);
    let data = simulate_discrete(&mut rng, &dm, 200);
    let init = random_init(&mut rng, 3);
    let p0 = init.p_sqrt.transpose() * &init.p_sqrt;
    let oracle = kalman_oracle(&dm, &data, &init.x, &p0);
    let run = run_filter(&dm, &data, &init, &exact()).unwrap();
    for (a, b) in run.log_densities.iter().zip(&oracle.log_densities) {
        assert!((a - b).abs() < 1e-10);
    }
    assert!((&run.final_mean - &oracle.filtered_mean).norm() < 1e-10);
    let cov = run.final_sqrt.transpose() * &run.final_sqrt;
    assert!(mat_rel_err(&cov, &oracle.filtered_cov, 1e-12) < 1e-9);
}

#[test]
fn gradient_matches_directional_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for case in 0..20 {
        let n = 1 + case % 4;
        let hold = if case % 3 == 0 { Hold::Zero } else { Hold::First };
        let mut dm = random_discrete(&mut rng, n, 2, 1, 0.5, hold);
        let data = simulate_discrete(&mut rng, &dm, 50);
        let mut init = random_init(&mut rng, n);
        let dirs: Vec<_> = (0..3).map(|_| random_partials(&mut rng, &dm)).collect();
        dm.partials = dirs.clone();
        init.dx = vec![DVector::zeros(n); 3];
        let run = run_filter(&dm, &data, &init, &FilterOptions { with_derivatives: true, steady_state_tol: 0.0 }).unwrap();
        for (i, d) in dirs.iter().enumerate() {
            let h = 1e-6;
            let lp = run_filter(&perturbed(&dm, d, h), &data, &init, &exact()).unwrap().loglik;
            let lm = run_filter(&perturbed(&dm, d, -h), &data, &init, &exact()).unwrap().loglik;
            let fd = (lp - lm) / (2.0 * h);
            assert!(rel_err(run.grad[i], fd, 1.0) < 1e-6, "case {case} dir {i}: {} vs {fd}", run.grad[i]);
        }
    }
}

#[test]
fn gradient_includes_initial_mean_sensitivity() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut dm = random_discrete(&mut rng, 2, 1, 1, 1.0, Hold::First);
    let data = simulate_discrete(&mut rng, &dm, 40);
    let mut init = random_init(&mut rng, 2);
    let mut zero = random_partials(&mut rng, &dm);
    for m in [&mut zero.ad, &mut zero.bd0, &mut zero.bd1, &mut zero.c, &mut zero.sw, &mut zero.sv] {
        m.fill(0.0);
    }
    dm.partials = vec![zero];
    let dir = DVector::from_vec(vec![0.7, -0.4]);
    init.dx = vec![dir.clone()];
    let run = run_filter(&dm, &data, &init, &FilterOptions { with_derivatives: true, steady_state_tol: 0.0 }).unwrap();
    let shifted = |h: f64| {
        let mut i = init.clone();
        i.x += &dir * h;
        run_filter(&dm, &data, &i, &exact()).unwrap().loglik
    };
    let fd = (shifted(1e-6) - shifted(-1e-6)) / 2e-6;
    assert!(rel_err(run.grad[0], fd, 1.0) < 1e-6);
}

#[test]
fn curvature_is_symmetric_positive_semidefinite() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for case in 0..20 {
        let n = 1 + case % 4;
        let mut dm = random_discrete(&mut rng, n, 2, 1, 0.5, Hold::First);
        let data = simulate_discrete(&mut rng, &dm, 100);
        let mut init = random_init(&mut rng, n);
        dm.partials = (0..5).map(|_| random_partials(&mut rng, &dm)).collect();
        init.dx = vec![DVector::zeros(n); 5];
        let run = run_filter(&dm, &data, &init, &FilterOptions::default()).unwrap();
        let h = &run.hess;
        assert!((h - h.transpose()).abs().max() <= 1e-12 * h.abs().max().max(1.0));
        let min = h.clone().symmetric_eigen().eigenvalues.min();
        assert!(min > -1e-8 * h.trace(), "case {case}: min eigenvalue {min}");
    }
}

#[test]
fn long_run_keeps_factor_valid() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let dm = random_discrete(&mut rng, 4, 2, 1, 1.0, Hold::First);
    let data = simulate_discrete(&mut rng, &dm, 100_000);
    let init = random_init(&mut rng, 4);
    let p0 = init.p_sqrt.transpose() * &init.p_sqrt;
    let oracle = kalman_oracle(&dm, &data, &init.x, &p0);
    let run = run_filter(&dm, &data, &init, &exact()).unwrap();
    assert!(rel_err(run.loglik, oracle.loglik, 1.0) < 1e-10);
    let s = &run.final_sqrt;
    for i in 0..4 {
        for j in 0..i {
            assert_eq!(s[(i, j)], 0.0);
        }
    }
    let cov = s.transpose() * s;
    assert!(cov.clone().symmetric_eigen().eigenvalues.min() > 0.0);
    assert!(mat_rel_err(&cov, &oracle.filtered_cov, 1e-12) < 1e-8);
}

#[test]
fn steady_state_shortcut_agrees_with_full_recursion() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut dm = random_discrete(&mut rng, 3, 2, 1, 1.0, Hold::First);
    let data = simulate_discrete(&mut rng, &dm, 2000);
    let mut init = random_init(&mut rng, 3);
    dm.partials = (0..3).map(|_| random_partials(&mut rng, &dm)).collect();
    init.dx = vec![DVector::zeros(3); 3];
    let full = run_filter(&dm, &data, &init, &FilterOptions { with_derivatives: true, steady_state_tol: 0.0 }).unwrap();
    let fast = run_filter(&dm, &data, &init, &FilterOptions::default()).unwrap();
    assert!(full.steady_from.is_none());
    assert!(fast.steady_from.is_some());
    assert!((full.loglik - fast.loglik).abs() < 1e-8);
    for (a, b) in full.grad.iter().zip(&fast.grad) {
        assert!(rel_err(*a, *b, 1.0) < 1e-7);
    }
    assert!(mat_rel_err(&fast.hess, &full.hess, 1.0) < 1e-7);
}

#[test]
fn rejects_mismatched_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let dm = random_discrete(&mut rng, 2, 2, 1, 1.0, Hold::First);
    let other = random_discrete(&mut rng, 2, 3, 1, 1.0, Hold::First);
    let data = simulate_discrete(&mut rng, &other, 10);
    let init = random_init(&mut rng, 2);
    assert!(run_filter(&dm, &data, &init, &exact()).is_err());
}

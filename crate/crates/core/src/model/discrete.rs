use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{condition_number, expm};

use super::{ContinuousMatrices, StateSpaceModel};

/// Largest accepted condition number of the state matrix.
pub const MAX_CONDITION: f64 = 1e12;

/// Input interpolation between samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Hold {
    /// Inputs constant over the interval.
    Zero,
    /// Inputs vary linearly between consecutive samples.
    #[default]
    First,
}

/// Partial derivatives of the discrete matrices with respect to one parameter.
#[derive(Debug, Clone)]
pub struct DiscretePartials {
    pub ad: DMatrix<f64>,
    pub bd0: DMatrix<f64>,
    pub bd1: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub sw: DMatrix<f64>,
    pub sv: DMatrix<f64>,
}

/// `x_{k+1} = A_d x_k + B_d0 (u_k + alpha dt) - B_d1 alpha + w_k`,
/// `y_k = C x_k + v_k`.
#[derive(Debug, Clone)]
pub struct DiscreteModel {
    pub ad: DMatrix<f64>,
    pub bd0: DMatrix<f64>,
    pub bd1: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub sw: DMatrix<f64>,
    pub sv: DMatrix<f64>,
    pub dt: f64,
    pub hold: Hold,
    /// One entry per differentiated parameter, in request order.
    pub partials: Vec<DiscretePartials>,
}

impl DiscreteModel {
    pub fn n_states(&self) -> usize {
        self.ad.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.bd0.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    /// Build a model directly from discrete matrices.
    pub fn from_matrices(
        ad: DMatrix<f64>,
        bd0: DMatrix<f64>,
        bd1: DMatrix<f64>,
        c: DMatrix<f64>,
        sw: DMatrix<f64>,
        sv: DMatrix<f64>,
        dt: f64,
        hold: Hold,
    ) -> Result<Self> {
        let n = ad.nrows();
        let p = c.nrows();
        let ok = ad.ncols() == n
            && bd0.nrows() == n
            && bd1.shape() == bd0.shape()
            && c.ncols() == n
            && sw.shape() == (n, n)
            && sv.shape() == (p, p);
        if !ok {
            return Err(Error::Dimension("inconsistent discrete model matrices".into()));
        }
        Ok(Self { ad, bd0, bd1, c, sw, sv, dt, hold, partials: Vec::new() })
    }
}

/// Input slope over one sample interval; zero under zero-order hold and
/// at the final sample.
pub fn foh_alpha(u_k: &[f64], u_next: Option<&[f64]>, dt: f64, hold: Hold) -> Vec<f64> {
    match (hold, u_next) {
        (Hold::First, Some(next)) if dt > 0.0 => {
            u_k.iter().zip(next).map(|(a, b)| (b - a) / dt).collect()
        }
        _ => vec![0.0; u_k.len()],
    }
}

struct Operators {
    ad: DMatrix<f64>,
    /// Integral of exp(A s) over [0, dt].
    f0: DMatrix<f64>,
    /// Integral of s exp(A s) over [0, dt].
    f1: DMatrix<f64>,
}

/// Block generator `[[A, I, 0], [0, 0, I], [0, 0, 0]] dt`, whose exponential
/// holds `exp(A dt)`, `∫ exp(A s) ds` and `∫ exp(A s) (dt - s) ds` over
/// `[0, dt]` in its first block row.
fn hold_generator(a: &DMatrix<f64>, dt: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let mut m = DMatrix::zeros(3 * n, 3 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
    for i in 0..n {
        m[(i, n + i)] = dt;
        m[(n + i, 2 * n + i)] = dt;
    }
    m
}

fn check_condition(a: &DMatrix<f64>, theta: &[f64]) -> Result<()> {
    let condition = condition_number(a);
    if condition <= MAX_CONDITION {
        Ok(())
    } else {
        Err(Error::SingularStateMatrix { condition, theta: theta.to_vec() })
    }
}

fn split_blocks(e: &DMatrix<f64>, n: usize, dt: f64) -> Operators {
    let s0 = e.view((0, n), (n, n)).into_owned();
    let s2 = e.view((0, 2 * n), (n, n)).into_owned();
    Operators { ad: e.view((0, 0), (n, n)).into_owned(), f1: &s0 * dt - s2, f0: s0 }
}

fn operators(a: &DMatrix<f64>, dt: f64, theta: &[f64]) -> Result<Operators> {
    check_condition(a, theta)?;
    let e = expm(&hold_generator(a, dt));
    Ok(split_blocks(&e, a.nrows(), dt))
}

fn discretize_matrices(m: &ContinuousMatrices, theta: &[f64], dt: f64, hold: Hold) -> Result<(DiscreteModel, Operators)> {
    let ops = operators(&m.a, dt, theta)?;
    let model = DiscreteModel {
        ad: ops.ad.clone(),
        bd0: &ops.f0 * &m.b,
        bd1: &ops.f1 * &m.b,
        c: m.c.clone(),
        sw: m.sw.clone(),
        sv: m.sv.clone(),
        dt,
        hold,
        partials: Vec::new(),
    };
    Ok((model, ops))
}

/// Zero/first-order-hold discretization of `model` at `theta`.
pub fn discretize(model: &dyn StateSpaceModel, theta: &[f64], dt: f64, hold: Hold) -> Result<DiscreteModel> {
    let m = model.matrices(theta)?;
    Ok(discretize_matrices(&m, theta, dt, hold)?.0)
}

/// Discretization plus exact partial derivatives of `A_d`, `B_d0`, `B_d1`
/// with respect to `theta[i]` for every `i` in `indices`.
///
/// Derivatives come from the exponential of the block matrix
/// `[[G, 0], [dG, G]]` with `G` the hold generator; its lower-left block is
/// the derivative of `exp(G)`.
pub fn discretize_with_derivatives(
    model: &dyn StateSpaceModel,
    theta: &[f64],
    indices: &[usize],
    dt: f64,
    hold: Hold,
) -> Result<DiscreteModel> {
    let m = model.matrices(theta)?;
    let (mut out, ops) = discretize_matrices(&m, theta, dt, hold)?;
    let n = m.a.nrows();
    let nu = m.b.ncols();
    for &i in indices {
        let d = model.partials(theta, i)?;
        let a_zero = d.a.iter().all(|&v| v == 0.0);
        let b_zero = d.b.iter().all(|&v| v == 0.0);
        let (dad, dbd0, dbd1) = if a_zero {
            if b_zero {
                (DMatrix::zeros(n, n), DMatrix::zeros(n, nu), DMatrix::zeros(n, nu))
            } else {
                (DMatrix::zeros(n, n), &ops.f0 * &d.b, &ops.f1 * &d.b)
            }
        } else {
            augmented_partials(&m.a, &d.a, &m.b, &d.b, dt, &ops)
        };
        out.partials.push(DiscretePartials { ad: dad, bd0: dbd0, bd1: dbd1, c: d.c, sw: d.sw, sv: d.sv });
    }
    Ok(out)
}

fn augmented_partials(
    a: &DMatrix<f64>,
    da: &DMatrix<f64>,
    b: &DMatrix<f64>,
    db: &DMatrix<f64>,
    dt: f64,
    ops: &Operators,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let g = hold_generator(a, dt);
    let k = g.nrows();
    let mut am = DMatrix::zeros(2 * k, 2 * k);
    am.view_mut((0, 0), (k, k)).copy_from(&g);
    am.view_mut((k, k), (k, k)).copy_from(&g);
    am.view_mut((k, 0), (n, n)).copy_from(&(da * dt));
    let e = expm(&am);
    let d = split_blocks(&e.view((k, 0), (k, k)).into_owned(), n, dt);
    (d.ad, &d.f0 * b + &ops.f0 * db, &d.f1 * b + &ops.f1 * db)
}

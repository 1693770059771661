//! Square-root Kalman filter with parameter sensitivities.
//!
//! Covariances are carried as upper triangular factors `P = S^T S` and
//! updated through QR factorizations of stacked pre-arrays:
//!
//! * measurement update: `[[Sv, 0], [Sp C^T, Sp]] = Q [[S, Kbar^T], [0, Pf]]`
//! * time update: `[[Pf Ad^T], [Sw]] = Q [[Sp']]`
//!
//! Derivatives of a post-array `R` of `pre = Q R` follow from
//! `G = Q^T dpre R^-1`, `dR = (L(G)^T + D(G) + U(G)) R`, since `Q^T dQ`
//! is skew-symmetric and `dR R^-1` is upper triangular.
//!
//! The model is time-invariant, so the covariance recursion converges to a
//! fixed point. Once the prior factor and all its derivatives stop changing
//! (relative change below [`FilterOptions::steady_state_tol`]) the QR steps
//! are skipped and only the mean recursions keep running.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{from_row_major, matmul, matmul_nt, matmul_tn, qr_thin, solve_right_upper, to_row_major, triangular_generator, upper_mul};
use crate::model::{DiscreteModel, Hold, StateSpaceModel};

/// Innovation square-root diagonals at or below this value are degenerate.
pub const DEGENERATE_TOL: f64 = 1e-150;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterOptions {
    /// Propagate sensitivities and accumulate gradient and curvature.
    pub with_derivatives: bool,
    /// Relative change below which the covariance recursion is frozen.
    /// Zero disables the shortcut.
    pub steady_state_tol: f64,
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self { with_derivatives: true, steady_state_tol: 1e-10 }
    }
}

/// Prior mean and covariance factor of the first state, with the mean's
/// derivatives (one per differentiated parameter).
#[derive(Debug, Clone)]
pub struct FilterInit {
    pub x: DVector<f64>,
    pub p_sqrt: DMatrix<f64>,
    pub dx: Vec<DVector<f64>>,
}

impl FilterInit {
    /// Initial condition from the model: parameterized states take their
    /// parameter values, the others the first measurement. The prior factor
    /// is `diag(init_sd)`.
    pub fn from_model(
        model: &dyn StateSpaceModel,
        theta: &[f64],
        indices: &[usize],
        first_output: &[f64],
        init_sd: f64,
    ) -> Self {
        let n = model.n_states();
        Self {
            x: model.initial_mean(theta, first_output),
            p_sqrt: DMatrix::from_diagonal_element(n, n, init_sd),
            dx: indices.iter().map(|&i| model.initial_mean_partial(theta, i)).collect(),
        }
    }
}

/// Output of one filter pass.
#[derive(Debug, Clone)]
pub struct FilterRun {
    pub n_outputs: usize,
    /// Standardized innovations, row-major `N x n_y`.
    pub residuals: Vec<f64>,
    /// Innovation covariance factors, `N` blocks of `n_y x n_y` row-major.
    pub innov_sqrt: Vec<f64>,
    /// `ln p(y_k | y_{1:k-1}, theta)` per step.
    pub log_densities: Vec<f64>,
    /// Compensated sum of `log_densities`.
    pub loglik: f64,
    /// Gradient of `loglik`; empty without derivatives.
    pub grad: Vec<f64>,
    /// Gauss-Newton approximation of the negative Hessian of `loglik`.
    pub hess: DMatrix<f64>,
    /// Step from which the covariance recursion was frozen.
    pub steady_from: Option<usize>,
    /// Filtered state mean after the last measurement.
    pub final_mean: DVector<f64>,
    /// Upper factor of the filtered state covariance after the last measurement.
    pub final_sqrt: DMatrix<f64>,
}

impl FilterRun {
    pub fn len(&self) -> usize {
        self.log_densities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_densities.is_empty()
    }

    /// Standardized residuals of output `j`.
    pub fn residual_series(&self, j: usize) -> Vec<f64> {
        self.residuals.iter().skip(j).step_by(self.n_outputs).copied().collect()
    }
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: &[f64]) -> f64 {
    let mut acc = CompensatedSum::default();
    for &v in values {
        acc.add(v);
    }
    acc.value()
}

#[derive(Debug, Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    c: f64,
}

impl CompensatedSum {
    #[inline]
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.c += (self.sum - t) + v;
        } else {
            self.c += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.c
    }
}

// ---------------------------------------------------------------------------
// Kernels on row-major slices. `n` states, `p` outputs, `m = p + n`.
// ---------------------------------------------------------------------------

/// Build the measurement pre-array into `pre` (`m x m`) and factor it.
fn mu_factor(n: usize, p: usize, sp: &[f64], c: &[f64], sv: &[f64], pre: &mut [f64], q: &mut [f64], work: &mut [f64]) {
    let m = n + p;
    pre[..m * m].iter_mut().for_each(|v| *v = 0.0);
    for i in 0..p {
        for j in 0..p {
            pre[i * m + j] = sv[i * p + j];
        }
    }
    for a in 0..n {
        let row = p + a;
        // (Sp C^T)[a, j] = sum_l Sp[a, l] C[j, l]
        for j in 0..p {
            let mut s = 0.0;
            for l in a..n {
                s += sp[a * n + l] * c[j * n + l];
            }
            pre[row * m + j] = s;
        }
        for b in a..n {
            pre[row * m + p + b] = sp[a * n + b];
        }
    }
    qr_thin(pre, m, m, q, work);
}

/// Solve `S^T z = r` in place for upper triangular `S` (stride `stride`).
#[inline]
fn solve_lower_transposed(s: &[f64], stride: usize, p: usize, r: &mut [f64]) {
    for j in 0..p {
        let mut v = r[j];
        for l in 0..j {
            v -= s[l * stride + j] * r[l];
        }
        r[j] = v / s[j * stride + j];
    }
}

/// Mean part of the measurement update. Returns the log predictive density.
#[allow(clippy::too_many_arguments)]
fn mu_mean(
    n: usize,
    p: usize,
    post: &[f64],
    x: &[f64],
    c: &[f64],
    y: &[f64],
    ebar: &mut [f64],
    xf: &mut [f64],
    step: usize,
) -> Result<f64> {
    let m = n + p;
    let mut log_det = 0.0;
    for j in 0..p {
        let d = post[j * m + j];
        if !(d > DEGENERATE_TOL) || !d.is_finite() {
            return Err(Error::DegenerateInnovation { step, value: d });
        }
        log_det += d.ln();
    }
    for j in 0..p {
        let mut e = y[j];
        for l in 0..n {
            e -= c[j * n + l] * x[l];
        }
        ebar[j] = e;
    }
    solve_lower_transposed(post, m, p, ebar);
    let mut quad = 0.0;
    for &e in ebar.iter().take(p) {
        quad += e * e;
    }
    for a in 0..n {
        let mut v = x[a];
        for j in 0..p {
            v += post[j * m + p + a] * ebar[j];
        }
        xf[a] = v;
    }
    let ld = -0.5 * p as f64 * LN_2PI - log_det - 0.5 * quad;
    if !ld.is_finite() {
        return Err(Error::NonFinite { step });
    }
    Ok(ld)
}

/// Derivative of a square post-array: `dpre` is overwritten by `dR`.
/// `scratch` must hold `m * m` values.
#[inline]
fn post_derivative(r: &[f64], q: &[f64], dpre: &mut [f64], scratch: &mut [f64], rows: usize, m: usize) -> bool {
    matmul_tn(q, dpre, scratch, rows, m, m);
    if !solve_right_upper(r, scratch, m, m) {
        return false;
    }
    triangular_generator(scratch, m);
    upper_mul(scratch, r, dpre, m);
    true
}

/// Derivative of the measurement post-array into `dpost` (`m x m`).
#[allow(clippy::too_many_arguments)]
fn mu_partial(
    n: usize,
    p: usize,
    post: &[f64],
    q: &[f64],
    sp: &[f64],
    c: &[f64],
    dsp: &[f64],
    dc: &[f64],
    dsv: &[f64],
    dpost: &mut [f64],
    scratch: &mut [f64],
) -> bool {
    let m = n + p;
    dpost[..m * m].iter_mut().for_each(|v| *v = 0.0);
    for i in 0..p {
        for j in 0..p {
            dpost[i * m + j] = dsv[i * p + j];
        }
    }
    for a in 0..n {
        let row = p + a;
        for j in 0..p {
            let mut s = 0.0;
            for l in 0..n {
                s += dsp[a * n + l] * c[j * n + l] + sp[a * n + l] * dc[j * n + l];
            }
            dpost[row * m + j] = s;
        }
        for b in 0..n {
            dpost[row * m + p + b] = dsp[a * n + b];
        }
    }
    post_derivative(post, q, dpost, scratch, m, m)
}

/// Mean sensitivities of the measurement update: `debar`, `dxf`.
#[allow(clippy::too_many_arguments)]
#[inline]
fn mu_partial_mean(
    n: usize,
    p: usize,
    post: &[f64],
    dpost: &[f64],
    x: &[f64],
    dx: &[f64],
    c: &[f64],
    dc: Option<&[f64]>,
    ebar: &[f64],
    debar: &mut [f64],
    dxf: &mut [f64],
) {
    let m = n + p;
    for j in 0..p {
        let mut v = 0.0;
        for l in 0..n {
            v -= c[j * n + l] * dx[l];
        }
        if let Some(dc) = dc {
            for l in 0..n {
                v -= dc[j * n + l] * x[l];
            }
        }
        // - dS^T ebar
        for l in 0..=j {
            v -= dpost[l * m + j] * ebar[l];
        }
        debar[j] = v;
    }
    solve_lower_transposed(post, m, p, debar);
    for a in 0..n {
        let mut v = dx[a];
        for j in 0..p {
            v += dpost[j * m + p + a] * ebar[j] + post[j * m + p + a] * debar[j];
        }
        dxf[a] = v;
    }
}

/// Time-update pre-array `[[Pf Ad^T], [Sw]]` (`2n x n`), factored in place.
fn tu_factor(n: usize, pf: &[f64], ad: &[f64], sw: &[f64], pre: &mut [f64], q: &mut [f64], work: &mut [f64]) {
    matmul_nt(pf, ad, pre, n, n, n);
    pre[n * n..2 * n * n].copy_from_slice(&sw[..n * n]);
    qr_thin(pre, 2 * n, n, q, work);
}

/// Derivative of the time-update factor into `dsp_next`.
#[allow(clippy::too_many_arguments)]
fn tu_partial(
    n: usize,
    r: &[f64],
    q: &[f64],
    pf: &[f64],
    dpf: &[f64],
    ad: &[f64],
    dad: Option<&[f64]>,
    dsw: &[f64],
    dpre: &mut [f64],
    tmp: &mut [f64],
    dsp_next: &mut [f64],
) -> bool {
    matmul_nt(dpf, ad, dpre, n, n, n);
    if let Some(dad) = dad {
        matmul_nt(pf, dad, tmp, n, n, n);
        for (d, t) in dpre[..n * n].iter_mut().zip(tmp.iter()) {
            *d += t;
        }
    }
    dpre[n * n..2 * n * n].copy_from_slice(&dsw[..n * n]);
    matmul_tn(q, dpre, tmp, 2 * n, n, n);
    if !solve_right_upper(r, tmp, n, n) {
        return false;
    }
    triangular_generator(tmp, n);
    upper_mul(tmp, r, dsp_next, n);
    true
}

fn is_zero(v: &[f64]) -> bool {
    v.iter().all(|&x| x == 0.0)
}

#[inline]
fn converged(old: &[f64], new: &[f64], tol: f64) -> bool {
    let mut scale = 0.0_f64;
    let mut diff = 0.0_f64;
    for (a, b) in old.iter().zip(new) {
        scale = scale.max(a.abs()).max(b.abs());
        diff = diff.max((a - b).abs());
    }
    diff <= tol * scale
}

/// Row-major flattened discrete partials for one parameter, with
/// structural-zero flags.
struct FlatPartial {
    ad: Option<Vec<f64>>,
    bd0: Option<Vec<f64>>,
    bd1: Option<Vec<f64>>,
    c: Option<Vec<f64>>,
    sw: Vec<f64>,
    sv: Vec<f64>,
    /// The parameter changes the covariance recursion.
    covariance: bool,
}

fn nonzero(m: &DMatrix<f64>) -> Option<Vec<f64>> {
    if m.iter().all(|&v| v == 0.0) {
        None
    } else {
        Some(to_row_major(m))
    }
}

/// Run the filter over `data`.
///
/// With derivatives, `dm.partials` and `init.dx` must have one entry per
/// differentiated parameter.
pub fn run_filter(dm: &DiscreteModel, data: &Dataset, init: &FilterInit, opts: &FilterOptions) -> Result<FilterRun> {
    let n = dm.n_states();
    let p = dm.n_outputs();
    let nu = dm.n_inputs();
    let m = n + p;
    if data.n_inputs() != nu || data.n_outputs() != p {
        return Err(Error::Dimension(format!(
            "model expects {nu} inputs and {p} outputs, dataset has {} and {}",
            data.n_inputs(),
            data.n_outputs()
        )));
    }
    if init.x.len() != n || init.p_sqrt.shape() != (n, n) {
        return Err(Error::Dimension("initial state does not match the model".into()));
    }
    let np = if opts.with_derivatives { dm.partials.len() } else { 0 };
    if opts.with_derivatives && init.dx.len() != np {
        return Err(Error::Dimension("initial mean derivatives do not match the parameter count".into()));
    }

    let ad = to_row_major(&dm.ad);
    let bd0 = to_row_major(&dm.bd0);
    let bd1 = to_row_major(&dm.bd1);
    let c = to_row_major(&dm.c);
    let sw = to_row_major(&dm.sw);
    let sv = to_row_major(&dm.sv);
    let parts: Vec<FlatPartial> = dm.partials[..np]
        .iter()
        .map(|d| {
            let ad = nonzero(&d.ad);
            let c = nonzero(&d.c);
            let sw = to_row_major(&d.sw);
            let sv = to_row_major(&d.sv);
            let covariance = ad.is_some() || c.is_some() || !is_zero(&sw) || !is_zero(&sv);
            FlatPartial { ad, bd0: nonzero(&d.bd0), bd1: nonzero(&d.bd1), c, sw, sv, covariance }
        })
        .collect();

    let zero_pn = vec![0.0; p * n];
    let big = m.max(2 * n);
    let mut x: Vec<f64> = init.x.iter().copied().collect();
    let mut sp = to_row_major(&init.p_sqrt);
    let mut sp_next = vec![0.0; n * n];
    let mut post = vec![0.0; m * m];
    let mut q = vec![0.0; m * m];
    let mut work = vec![0.0; big * big];
    let mut scratch = vec![0.0; big * big];
    let mut pre2 = vec![0.0; 2 * n * n];
    let mut q2 = vec![0.0; 2 * n * n];
    let mut pf = vec![0.0; n * n];
    let mut ebar = vec![0.0; p];
    let mut xf = vec![0.0; n];
    let mut ub = vec![0.0; nu];
    let mut alpha = vec![0.0; nu];
    let mut tmp_n = vec![0.0; n];

    let mut dx: Vec<Vec<f64>> = init.dx.iter().take(np).map(|v| v.iter().copied().collect()).collect();
    let mut dsp = vec![vec![0.0; n * n]; np];
    let mut dsp_next = vec![vec![0.0; n * n]; np];
    let mut dpost = vec![vec![0.0; m * m]; np];
    let mut dxf = vec![vec![0.0; n]; np];
    let mut dpf = vec![0.0; n * n];
    let mut dpre2 = vec![0.0; 2 * n * n];
    // per parameter: [debar (p), dS_jj / S_jj (p)]
    let mut v = vec![0.0; np * 2 * p];
    let mut hess_acc = vec![0.0; np * np];
    let mut grad = vec![0.0; np];

    let steps = data.len();
    let mut residuals = Vec::with_capacity(steps * p);
    let mut innov = Vec::with_capacity(steps * p * p);
    let mut log_densities = Vec::with_capacity(steps);
    let mut total = CompensatedSum::default();
    let mut steady = false;
    let mut steady_from = None;
    let covariance_params: Vec<usize> = (0..np).filter(|&i| parts[i].covariance).collect();

    for k in 0..steps {
        if !steady {
            mu_factor(n, p, &sp, &c, &sv, &mut post, &mut q, &mut work);
            for &i in &covariance_params {
                let part = &parts[i];
                let dc = part.c.as_deref().unwrap_or(&zero_pn);
                if !mu_partial(n, p, &post, &q, &sp, &c, &dsp[i], dc, &part.sv, &mut dpost[i], &mut scratch) {
                    return Err(Error::SingularFactor { stage: "measurement", step: k });
                }
            }
        }
        let ld = mu_mean(n, p, &post, &x, &c, data.output(k), &mut ebar, &mut xf, k)?;
        log_densities.push(ld);
        total.add(ld);
        residuals.extend_from_slice(&ebar);
        for a in 0..p {
            innov.extend_from_slice(&post[a * m..a * m + p]);
        }

        for i in 0..np {
            let part = &parts[i];
            let (de, dsr) = v[i * 2 * p..(i + 1) * 2 * p].split_at_mut(p);
            mu_partial_mean(n, p, &post, &dpost[i], &x, &dx[i], &c, part.c.as_deref(), &ebar, de, &mut dxf[i]);
            let mut g = 0.0;
            for j in 0..p {
                let ratio = dpost[i][j * m + j] / post[j * m + j];
                dsr[j] = ratio;
                g -= ratio + de[j] * ebar[j];
            }
            grad[i] += g;
        }
        if np > 0 {
            let w = 2 * p;
            for i in 0..np {
                let vi = &v[i * w..(i + 1) * w];
                for j in i..np {
                    let vj = &v[j * w..(j + 1) * w];
                    let mut s = 0.0;
                    for l in 0..w {
                        s += vi[l] * vj[l];
                    }
                    hess_acc[i * np + j] += s;
                }
            }
        }
        if xf.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: k });
        }
        if k + 1 == steps {
            break;
        }

        // time update
        let u = data.input(k);
        match (dm.hold, k + 1 < steps) {
            (Hold::First, true) => {
                let un = data.input(k + 1);
                for j in 0..nu {
                    alpha[j] = (un[j] - u[j]) / dm.dt;
                }
            }
            _ => alpha.iter_mut().for_each(|a| *a = 0.0),
        }
        for j in 0..nu {
            ub[j] = u[j] + alpha[j] * dm.dt;
        }
        if !steady {
            for a in 0..n {
                pf[a * n..(a + 1) * n].copy_from_slice(&post[(p + a) * m + p..(p + a) * m + m]);
            }
            tu_factor(n, &pf, &ad, &sw, &mut pre2, &mut q2, &mut work);
            sp_next.copy_from_slice(&pre2[..n * n]);
            for &i in &covariance_params {
                let part = &parts[i];
                for a in 0..n {
                    dpf[a * n..(a + 1) * n].copy_from_slice(&dpost[i][(p + a) * m + p..(p + a) * m + m]);
                }
                if !tu_partial(n, &sp_next, &q2, &pf, &dpf, &ad, part.ad.as_deref(), &part.sw, &mut dpre2, &mut scratch, &mut dsp_next[i])
                {
                    return Err(Error::SingularFactor { stage: "time", step: k });
                }
            }
            if opts.steady_state_tol > 0.0 {
                let mut done = converged(&sp, &sp_next, opts.steady_state_tol);
                for &i in &covariance_params {
                    if !done {
                        break;
                    }
                    done = converged(&dsp[i], &dsp_next[i], opts.steady_state_tol);
                }
                if done {
                    steady = true;
                    steady_from = Some(k + 1);
                }
            }
            std::mem::swap(&mut sp, &mut sp_next);
            for &i in &covariance_params {
                std::mem::swap(&mut dsp[i], &mut dsp_next[i]);
            }
        }
        // mean: x = Ad xf + Bd0 ub - Bd1 alpha
        matmul(&ad, &xf, &mut x, n, n, 1);
        add_input_terms(&bd0, &bd1, &ub, &alpha, &mut x, n, nu);
        for i in 0..np {
            let part = &parts[i];
            matmul(&ad, &dxf[i], &mut dx[i], n, n, 1);
            if let Some(dad) = &part.ad {
                matmul(dad, &xf, &mut tmp_n, n, n, 1);
                for (d, t) in dx[i].iter_mut().zip(&tmp_n) {
                    *d += t;
                }
            }
            if part.bd0.is_some() || part.bd1.is_some() {
                let b0 = part.bd0.as_deref().unwrap_or(&[]);
                let b1 = part.bd1.as_deref().unwrap_or(&[]);
                add_input_terms(b0, b1, &ub, &alpha, &mut dx[i], n, nu);
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: k });
        }
    }

    let mut hess = DMatrix::zeros(np, np);
    for i in 0..np {
        for j in i..np {
            hess[(i, j)] = hess_acc[i * np + j];
            hess[(j, i)] = hess_acc[i * np + j];
        }
    }
    if grad.iter().any(|g| !g.is_finite()) || hess.iter().any(|h| !h.is_finite()) {
        return Err(Error::NonFinite { step: steps.saturating_sub(1) });
    }
    Ok(FilterRun {
        n_outputs: p,
        residuals,
        innov_sqrt: innov,
        log_densities,
        loglik: total.value(),
        grad,
        hess,
        steady_from,
        final_mean: DVector::from_column_slice(&xf),
        final_sqrt: DMatrix::from_fn(n, n, |a, b| post[(p + a) * m + p + b]),
    })
}

/// `x += b0 ub - b1 alpha`; an empty slice stands for a zero matrix.
#[inline]
fn add_input_terms(b0: &[f64], b1: &[f64], ub: &[f64], alpha: &[f64], x: &mut [f64], n: usize, nu: usize) {
    for a in 0..n {
        let mut s = 0.0;
        if !b0.is_empty() {
            for j in 0..nu {
                s += b0[a * nu + j] * ub[j];
            }
        }
        if !b1.is_empty() {
            for j in 0..nu {
                s -= b1[a * nu + j] * alpha[j];
            }
        }
        x[a] += s;
    }
}

// ---------------------------------------------------------------------------
// Single-step operations on nalgebra types.
// ---------------------------------------------------------------------------

/// Filter state before a measurement: prior mean, prior factor and their
/// derivatives.
#[derive(Debug, Clone)]
pub struct FilterState {
    pub x: DVector<f64>,
    pub p_sqrt: DMatrix<f64>,
    pub dx: Vec<DVector<f64>>,
    pub dp_sqrt: Vec<DMatrix<f64>>,
}

/// Result of a measurement update.
#[derive(Debug, Clone)]
pub struct MeasurementUpdate {
    pub s_sqrt: DMatrix<f64>,
    /// Normalized gain `P C^T S^{-1/2}` (`n x n_y`).
    pub kbar: DMatrix<f64>,
    pub p_sqrt: DMatrix<f64>,
    pub ebar: DVector<f64>,
    pub x: DVector<f64>,
    pub log_density: f64,
    /// Orthogonal factor of the pre-array.
    pub q: DMatrix<f64>,
    /// Full post-array `[[S, Kbar^T], [0, Pf]]`.
    pub post: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct MeasurementPartials {
    pub ds_sqrt: DMatrix<f64>,
    pub dkbar: DMatrix<f64>,
    pub dp_sqrt: DMatrix<f64>,
    pub debar: DVector<f64>,
    pub dx: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct TimeUpdate {
    pub x: DVector<f64>,
    pub p_sqrt: DMatrix<f64>,
    /// Thin orthogonal factor of the `2n x n` pre-array.
    pub q: DMatrix<f64>,
}

fn qr_buffers(rows: usize, cols: usize) -> (Vec<f64>, Vec<f64>) {
    (vec![0.0; rows * cols], vec![0.0; rows * cols])
}

pub fn measurement_update(
    x: &DVector<f64>,
    p_sqrt: &DMatrix<f64>,
    y: &[f64],
    c: &DMatrix<f64>,
    sv_sqrt: &DMatrix<f64>,
) -> Result<MeasurementUpdate> {
    let n = x.len();
    let p = c.nrows();
    let m = n + p;
    let mut post = vec![0.0; m * m];
    let (mut q, mut work) = qr_buffers(m, m);
    let sp = to_row_major(p_sqrt);
    let cf = to_row_major(c);
    mu_factor(n, p, &sp, &cf, &to_row_major(sv_sqrt), &mut post, &mut q, &mut work);
    let mut ebar = vec![0.0; p];
    let mut xf = vec![0.0; n];
    let xs: Vec<f64> = x.iter().copied().collect();
    let log_density = mu_mean(n, p, &post, &xs, &cf, y, &mut ebar, &mut xf, 0)?;
    let post_m = from_row_major(m, m, &post);
    Ok(MeasurementUpdate {
        s_sqrt: post_m.view((0, 0), (p, p)).into_owned(),
        kbar: post_m.view((0, p), (p, n)).transpose(),
        p_sqrt: post_m.view((p, p), (n, n)).into_owned(),
        ebar: DVector::from_vec(ebar),
        x: DVector::from_vec(xf),
        log_density,
        q: from_row_major(m, m, &q),
        post: post_m,
    })
}

/// Sensitivities of a measurement update with respect to one parameter.
#[allow(clippy::too_many_arguments)]
pub fn measurement_update_derivatives(
    mu: &MeasurementUpdate,
    x: &DVector<f64>,
    p_sqrt: &DMatrix<f64>,
    c: &DMatrix<f64>,
    dx: &DVector<f64>,
    dp_sqrt: &DMatrix<f64>,
    dc: &DMatrix<f64>,
    dsv_sqrt: &DMatrix<f64>,
) -> Result<MeasurementPartials> {
    let n = x.len();
    let p = c.nrows();
    let m = n + p;
    let post = to_row_major(&mu.post);
    let q = to_row_major(&mu.q);
    let mut dpost = vec![0.0; m * m];
    let mut scratch = vec![0.0; m * m];
    let cf = to_row_major(c);
    let dcf = to_row_major(dc);
    if !mu_partial(n, p, &post, &q, &to_row_major(p_sqrt), &cf, &to_row_major(dp_sqrt), &dcf, &to_row_major(dsv_sqrt), &mut dpost, &mut scratch) {
        return Err(Error::SingularFactor { stage: "measurement", step: 0 });
    }
    let xs: Vec<f64> = x.iter().copied().collect();
    let dxs: Vec<f64> = dx.iter().copied().collect();
    let ebar: Vec<f64> = mu.ebar.iter().copied().collect();
    let mut debar = vec![0.0; p];
    let mut dxf = vec![0.0; n];
    mu_partial_mean(n, p, &post, &dpost, &xs, &dxs, &cf, Some(&dcf), &ebar, &mut debar, &mut dxf);
    let d = from_row_major(m, m, &dpost);
    Ok(MeasurementPartials {
        ds_sqrt: d.view((0, 0), (p, p)).into_owned(),
        dkbar: d.view((0, p), (p, n)).transpose(),
        dp_sqrt: d.view((p, p), (n, n)).into_owned(),
        debar: DVector::from_vec(debar),
        dx: DVector::from_vec(dxf),
    })
}

/// `x' = Ad x + Bd0 (u + alpha dt) - Bd1 alpha`, `P'^{1/2}` from the QR of
/// `[[Pf Ad^T], [Sw]]`.
pub fn time_update(x: &DVector<f64>, p_sqrt: &DMatrix<f64>, dm: &DiscreteModel, u: &[f64], alpha: &[f64]) -> Result<TimeUpdate> {
    let n = x.len();
    let mut pre = vec![0.0; 2 * n * n];
    let (mut q, mut work) = qr_buffers(2 * n, n);
    tu_factor(n, &to_row_major(p_sqrt), &to_row_major(&dm.ad), &to_row_major(&dm.sw), &mut pre, &mut q, &mut work);
    let ub: Vec<f64> = u.iter().zip(alpha).map(|(u, a)| u + a * dm.dt).collect();
    let xn = &dm.ad * x + &dm.bd0 * DVector::from_column_slice(&ub) - &dm.bd1 * DVector::from_column_slice(alpha);
    if xn.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { step: 0 });
    }
    Ok(TimeUpdate { x: xn, p_sqrt: from_row_major(n, n, &pre[..n * n]), q: from_row_major(2 * n, n, &q) })
}

/// Sensitivities of a time update with respect to parameter `index` of
/// `dm.partials`; returns `(dx', dP'^{1/2})`.
#[allow(clippy::too_many_arguments)]
pub fn time_update_derivatives(
    tu: &TimeUpdate,
    x: &DVector<f64>,
    p_sqrt: &DMatrix<f64>,
    dx: &DVector<f64>,
    dp_sqrt: &DMatrix<f64>,
    dm: &DiscreteModel,
    index: usize,
    u: &[f64],
    alpha: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = x.len();
    let d = &dm.partials[index];
    let mut dpre = vec![0.0; 2 * n * n];
    let mut tmp = vec![0.0; 2 * n * n];
    let mut out = vec![0.0; n * n];
    let dad = to_row_major(&d.ad);
    if !tu_partial(
        n,
        &to_row_major(&tu.p_sqrt),
        &to_row_major(&tu.q),
        &to_row_major(p_sqrt),
        &to_row_major(dp_sqrt),
        &to_row_major(&dm.ad),
        Some(&dad),
        &to_row_major(&d.sw),
        &mut dpre,
        &mut tmp,
        &mut out,
    ) {
        return Err(Error::SingularFactor { stage: "time", step: 0 });
    }
    let ub: Vec<f64> = u.iter().zip(alpha).map(|(u, a)| u + a * dm.dt).collect();
    let dxn = &d.ad * x + &dm.ad * dx + &d.bd0 * DVector::from_column_slice(&ub) - &d.bd1 * DVector::from_column_slice(alpha);
    Ok((dxn, from_row_major(n, n, &out)))
}

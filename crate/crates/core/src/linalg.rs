//! Dense linear-algebra helpers.
//!
//! The nalgebra-based functions serve the model and sampler layers. The
//! row-major slice kernels at the bottom are used by the filter hot loop,
//! where matrices are tiny (n <= 8) and allocation would dominate.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Matrix exponential by scaling and squaring with a Padé approximant.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    if a.nrows() == 0 {
        return a.clone();
    }
    a.exp()
}

/// 2-norm condition number from the singular values.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 1.0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Symmetrize and floor the eigenvalues of a curvature matrix at
/// `1e-8 * max(max |lambda|, 1)` so that it is positive definite.
pub fn regularize_spd(h: &DMatrix<f64>) -> DMatrix<f64> {
    let n = h.nrows();
    if n == 0 {
        return h.clone();
    }
    let sym = (h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max_abs = eig.eigenvalues.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    let tau = 1e-8 * max_abs.max(1.0);
    let floored = eig.eigenvalues.map(|l| if l.is_finite() { l.max(tau) } else { tau });
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&floored) * v.transpose();
    (&out + out.transpose()) * 0.5
}

/// Sample covariance (unbiased) of the rows of `x`.
pub fn sample_covariance(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.len());
    let mut mean = DVector::zeros(d);
    for r in rows {
        for j in 0..d {
            mean[j] += r[j];
        }
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        for i in 0..d {
            let di = r[i] - mean[i];
            for j in 0..d {
                cov[(i, j)] += di * (r[j] - mean[j]);
            }
        }
    }
    cov / (n as f64 - 1.0)
}

/// Row-major copy of a nalgebra matrix.
pub(crate) fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub(crate) fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}

/// In-place Householder QR of a row-major `rows x cols` matrix, `rows >= cols`.
///
/// On return the leading `cols x cols` block of `a` holds the upper
/// triangular factor with a non-negative diagonal (entries below the
/// diagonal are zeroed) and `q` holds the matching thin orthonormal factor
/// (`rows x cols`, row-major) so that `a_in = q * r`.
/// `work` must hold at least `rows * cols` values.
pub(crate) fn qr_thin(a: &mut [f64], rows: usize, cols: usize, q: &mut [f64], work: &mut [f64]) {
    debug_assert!(rows >= cols);
    let v = &mut work[..rows * cols];
    v.iter_mut().for_each(|x| *x = 0.0);
    for j in 0..cols {
        if j + 1 >= rows {
            break;
        }
        let mut norm2 = 0.0;
        for i in j..rows {
            norm2 += a[i * cols + j] * a[i * cols + j];
        }
        let norm = norm2.sqrt();
        if norm == 0.0 {
            continue;
        }
        let x0 = a[j * cols + j];
        let alpha = if x0 >= 0.0 { -norm } else { norm };
        // v = x - alpha e1, stored in column j of the work buffer
        let mut vnorm2 = 0.0;
        for i in j..rows {
            let vi = if i == j { x0 - alpha } else { a[i * cols + j] };
            v[i * cols + j] = vi;
            vnorm2 += vi * vi;
        }
        if vnorm2 == 0.0 {
            continue;
        }
        let inv = 1.0 / vnorm2.sqrt();
        for i in j..rows {
            v[i * cols + j] *= inv;
        }
        for c in j..cols {
            let mut dot = 0.0;
            for i in j..rows {
                dot += v[i * cols + j] * a[i * cols + c];
            }
            let f = 2.0 * dot;
            for i in j..rows {
                a[i * cols + c] -= f * v[i * cols + j];
            }
        }
    }
    // Q = H_0 H_1 ... H_{cols-1} [I; 0]
    q[..rows * cols].iter_mut().for_each(|x| *x = 0.0);
    for i in 0..cols {
        q[i * cols + i] = 1.0;
    }
    for j in (0..cols).rev() {
        if j + 1 >= rows {
            continue;
        }
        for c in 0..cols {
            let mut dot = 0.0;
            for i in j..rows {
                dot += v[i * cols + j] * q[i * cols + c];
            }
            if dot == 0.0 {
                continue;
            }
            let f = 2.0 * dot;
            for i in j..rows {
                q[i * cols + c] -= f * v[i * cols + j];
            }
        }
    }
    for i in 0..rows {
        for j in 0..cols.min(i) {
            a[i * cols + j] = 0.0;
        }
    }
    for i in cols..rows {
        for j in 0..cols {
            a[i * cols + j] = 0.0;
        }
    }
    for j in 0..cols {
        if a[j * cols + j] < 0.0 {
            for c in j..cols {
                a[j * cols + c] = -a[j * cols + c];
            }
            for i in 0..rows {
                q[i * cols + j] = -q[i * cols + j];
            }
        }
    }
}

/// `out = a * b` with `a: m x k`, `b: k x n`, all row-major.
#[inline]
pub(crate) fn matmul(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        row.iter_mut().for_each(|x| *x = 0.0);
        for l in 0..k {
            let ail = a[i * k + l];
            if ail == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += ail * bv;
            }
        }
    }
}

/// `out = a^T * b` with `a: k x m`, `b: k x n`.
#[inline]
pub(crate) fn matmul_tn(a: &[f64], b: &[f64], out: &mut [f64], k: usize, m: usize, n: usize) {
    out[..m * n].iter_mut().for_each(|x| *x = 0.0);
    for l in 0..k {
        let brow = &b[l * n..(l + 1) * n];
        for i in 0..m {
            let ali = a[l * m + i];
            if ali == 0.0 {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += ali * bv;
            }
        }
    }
}

/// `out = a * b^T` with `a: m x k`, `b: n x k`.
#[inline]
pub(crate) fn matmul_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for l in 0..k {
                s += arow[l] * brow[l];
            }
            out[i * n + j] = s;
        }
    }
}

/// Solve `g * r = x` for `g` where `r` is upper triangular `n x n` and `x`
/// is `m x n`; the result overwrites `x`. Returns false on a zero pivot.
#[inline]
pub(crate) fn solve_right_upper(r: &[f64], x: &mut [f64], m: usize, n: usize) -> bool {
    for j in 0..n {
        if r[j * n + j] == 0.0 {
            return false;
        }
    }
    for i in 0..m {
        let row = &mut x[i * n..(i + 1) * n];
        for j in 0..n {
            let mut s = row[j];
            for l in 0..j {
                s -= row[l] * r[l * n + j];
            }
            row[j] = s / r[j * n + j];
        }
    }
    true
}

/// Replace the `n x n` matrix `g` by `L(g)^T + D(g) + U(g)`, the upper
/// triangular generator of a triangular factor's derivative.
#[inline]
pub(crate) fn triangular_generator(g: &mut [f64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            g[i * n + j] += g[j * n + i];
            g[j * n + i] = 0.0;
        }
    }
}

/// `out = a * b` for upper triangular `a` and `b`, both `n x n`.
#[inline]
pub(crate) fn upper_mul(a: &[f64], b: &[f64], out: &mut [f64], n: usize) {
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            if j >= i {
                for l in i..=j {
                    s += a[i * n + l] * b[l * n + j];
                }
            }
            out[i * n + j] = s;
        }
    }
}

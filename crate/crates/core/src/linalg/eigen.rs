//! Real symmetric eigenvalues (values only).
//!
//! Two independent solvers are provided. [`EigenSolver::Jacobi`] is the cyclic
//! Jacobi rotation method: simple and accurate, but it costs roughly `3n^3`
//! flops per sweep. [`EigenSolver::TridiagonalQl`] reduces to tridiagonal form
//! with Householder reflections and then runs implicit QL; it is several times
//! faster at the batch sizes the relevance scorer uses (`s = 64..512`) and is
//! the default.

use super::matrix::DenseMatrix;
use crate::error::{Error, Result};

/// Maximum tolerated `|a_ij - a_ji|` for an input to count as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Off-diagonal Frobenius norm at which Jacobi stops.
pub const JACOBI_TOL: f64 = 1e-12;

pub const JACOBI_MAX_SWEEPS: usize = 100;

const QL_MAX_ITER: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenSolver {
    Jacobi,
    #[default]
    TridiagonalQl,
}

/// Full spectrum of a symmetric matrix, sorted descending, using the default
/// solver.
pub fn sym_eigenvalues(a: &DenseMatrix) -> Result<Vec<f64>> {
    sym_eigenvalues_with(a, EigenSolver::default())
}

pub fn sym_eigenvalues_with(a: &DenseMatrix, solver: EigenSolver) -> Result<Vec<f64>> {
    if !a.is_square() {
        return Err(Error::invalid(format!(
            "eigenvalues need a square matrix, got {:?}",
            a.shape()
        )));
    }
    let tol = SYMMETRY_TOL * a.max_abs().max(1.0);
    let asym = a.asymmetry();
    if asym > tol {
        return Err(Error::invalid(format!(
            "matrix is not symmetric (max |a_ij - a_ji| = {asym:e})"
        )));
    }
    if a.rows() == 0 {
        return Ok(Vec::new());
    }
    let mut values = match solver {
        EigenSolver::Jacobi => jacobi_eigenvalues(a)?,
        EigenSolver::TridiagonalQl => tridiagonal_ql_eigenvalues(a)?,
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "eigenvalue iteration produced non-finite values".into(),
        ));
    }
    values.sort_by(|x, y| y.total_cmp(x));
    Ok(values)
}

fn jacobi_eigenvalues(input: &DenseMatrix) -> Result<Vec<f64>> {
    let n = input.rows();
    let mut a = input.as_slice().to_vec();
    // Symmetrize so the rotation formulas, which read only one triangle, see
    // a consistent matrix.
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = v;
            a[j * n + i] = v;
        }
    }
    let scale = input.frobenius_norm().max(1.0);
    let tol = JACOBI_TOL * scale;

    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a[i * n + j] * a[i * n + j];
                }
            }
        }
        if off.sqrt() < tol {
            return Ok((0..n).map(|i| a[i * n + i]).collect());
        }
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.is_finite() {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                } else {
                    0.0
                };
                if t == 0.0 {
                    // apq is negligible relative to the diagonal gap.
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    continue;
                }
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    let new_kp = c * akp - s * akq;
                    let new_kq = s * akp + c * akq;
                    a[k * n + p] = new_kp;
                    a[p * n + k] = new_kp;
                    a[k * n + q] = new_kq;
                    a[q * n + k] = new_kq;
                }
            }
        }
    }
    Err(Error::Numeric(format!(
        "Jacobi eigenvalue iteration did not converge in {JACOBI_MAX_SWEEPS} sweeps"
    )))
}

/// Householder reduction to tridiagonal form (lower triangle only), returning
/// `(diagonal, subdiagonal)` with `sub[0] == 0` and `sub[i]` coupling rows
/// `i - 1` and `i`.
fn tridiagonalize(input: &DenseMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = input.rows();
    let mut a = input.as_slice().to_vec();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0;
        if l > 0 {
            let scale: f64 = (0..=l).map(|k| a[i * n + k].abs()).sum();
            if scale == 0.0 {
                e[i] = a[i * n + l];
            } else {
                for k in 0..=l {
                    a[i * n + k] /= scale;
                    h += a[i * n + k] * a[i * n + k];
                }
                let f = a[i * n + l];
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                a[i * n + l] = f - g;
                let mut f = 0.0;
                for j in 0..=l {
                    let mut g = 0.0;
                    for k in 0..=j {
                        g += a[j * n + k] * a[i * n + k];
                    }
                    for k in j + 1..=l {
                        g += a[k * n + j] * a[i * n + k];
                    }
                    e[j] = g / h;
                    f += e[j] * a[i * n + j];
                }
                let hh = f / (h + h);
                for j in 0..=l {
                    let f = a[i * n + j];
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        a[j * n + k] -= f * e[k] + g * a[i * n + k];
                    }
                }
            }
        } else {
            e[i] = a[i * n + l];
        }
        d[i] = h;
    }
    e[0] = 0.0;
    for i in 0..n {
        d[i] = a[i * n + i];
    }
    (d, e)
}

fn tridiagonal_ql_eigenvalues(input: &DenseMatrix) -> Result<Vec<f64>> {
    let n = input.rows();
    let (mut d, mut e) = tridiagonalize(input);
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    // Off-diagonals this small relative to the whole matrix count as zero;
    // a purely relative test never fires for clusters of zero eigenvalues.
    let norm = d
        .iter()
        .zip(&e)
        .fold(0.0f64, |acc, (a, b)| acc.max(a.abs() + b.abs()));

    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd.max(norm) {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > QL_MAX_ITER {
                return Err(Error::Numeric(format!(
                    "implicit QL did not converge for eigenvalue {l} in {QL_MAX_ITER} iterations"
                )));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            for i in (l..m).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(d)
}

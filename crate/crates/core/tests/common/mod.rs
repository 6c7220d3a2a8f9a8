//! Independent reference implementations used as test oracles.
//!
//! Nothing here calls into the library's numerical routines: eigenvalues come
//! from a cyclic Jacobi sweep, derivatives from central differences and costs
//! from straight scalar loops.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Point2};
use onm_field::{Measurement, RbfBasis, StageTerm};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// All eigenvalues of a symmetric matrix, ascending, by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| 0.5 * (m[(i, j)] + m[(j, i)])).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        let diag: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum();
        if off <= 1e-30 * diag.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let (rp, rq) = (row[p], row[q]);
                    row[p] = c * rp - s * rq;
                    row[q] = s * rp + c * rq;
                }
                let (row_p, row_q) = (a[p].clone(), a[q].clone());
                for k in 0..n {
                    a[p][k] = c * row_p[k] - s * row_q[k];
                    a[q][k] = s * row_p[k] + c * row_q[k];
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn jacobi_min(m: &DMatrix<f64>) -> f64 {
    jacobi_eigenvalues(m)[0]
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn dense_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    let mut inv = DMatrix::<f64>::identity(n, n);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs())).unwrap();
        a.swap_rows(col, pivot);
        inv.swap_rows(col, pivot);
        let d = a[(col, col)];
        for j in 0..n {
            a[(col, j)] /= d;
            inv[(col, j)] /= d;
        }
        for i in 0..n {
            if i != col {
                let f = a[(i, col)];
                if f != 0.0 {
                    for j in 0..n {
                        a[(i, j)] -= f * a[(col, j)];
                        inv[(i, j)] -= f * inv[(col, j)];
                    }
                }
            }
        }
    }
    inv
}

/// `exp(-|c - x|^2 / sigma^2)`, one scalar at a time.
pub fn kernel_scalar(c: (f64, f64), sigma: f64, x: (f64, f64)) -> f64 {
    let dx = c.0 - x.0;
    let dy = c.1 - x.1;
    (-(dx * dx + dy * dy) / (sigma * sigma)).exp()
}

/// Logistic stage cost `log(1 + exp(-eta z m))`, using the log series when
/// the exponential is small enough for `ln(1 + e)` to lose digits.
pub fn naive_stage_cost(eta: f64, tau: f64, beta: &[f64], kernel: &[f64], detected: bool) -> f64 {
    let m: f64 = beta.iter().zip(kernel).map(|(b, k)| b * k).sum::<f64>() - tau;
    let z = if detected { 1.0 } else { -1.0 };
    let e = (-eta * z * m).exp();
    if e < 1e-2 {
        (1..=12).map(|n| (if n % 2 == 1 { 1.0 } else { -1.0 }) * e.powi(n) / n as f64).sum()
    } else {
        (1.0 + e).ln()
    }
}

/// Central differences of a scalar function.
pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        (f(&xp) - f(&xm)) / (2.0 * h)
    })
}

/// Central differences of a vector function, one column per coordinate.
pub fn fd_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let col = (f(&xp) - f(&xm)) / (2.0 * h);
        out.set_column(j, &col);
    }
    out
}

pub fn paper_basis() -> RbfBasis {
    let centers = [12.5, 37.5, 62.5, 87.5];
    let mut pts = Vec::new();
    for &y in &centers {
        for &x in &centers {
            pts.push(Point2::new(x, y));
        }
    }
    RbfBasis::new(pts, vec![25.0; 16]).unwrap()
}

pub fn basis_2x2() -> RbfBasis {
    RbfBasis::new(
        vec![Point2::new(25.0, 25.0), Point2::new(75.0, 25.0), Point2::new(25.0, 75.0), Point2::new(75.0, 75.0)],
        vec![35.0; 4],
    )
    .unwrap()
}

pub fn random_point<R: Rng>(rng: &mut R) -> Point2<f64> {
    Point2::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0))
}

pub fn random_vector<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(lo..hi))
}

pub fn random_term<R: Rng>(rng: &mut R, basis: &RbfBasis, index: usize) -> StageTerm {
    StageTerm::new(basis, Measurement::new(random_point(rng), rng.random_bool(0.5), index))
}

/// Random symmetric positive definite matrix `A A' + shift I`.
pub fn random_spd<R: Rng>(rng: &mut R, n: usize, shift: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * shift
}

pub fn rel_err_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

pub fn rel_err_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

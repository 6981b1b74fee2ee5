//! Cholesky factorisation, triangular solves and stable reductions.

use super::Matrix;
use crate::error::{Error, Result};

/// Jitter escalation used when no schedule is given explicitly.
pub const DEFAULT_JITTER_SCHEDULE: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

/// Symmetry tolerance accepted by [`cholesky`].
pub const SYMMETRY_TOL: f64 = 1e-10;

/// A lower Cholesky factor and the diagonal jitter that was needed to obtain it.
#[derive(Clone, Debug)]
pub struct Cholesky {
    pub factor: Matrix,
    pub jitter: f64,
}

impl Cholesky {
    /// Solves `A x = b` using the stored factor.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let z = tri_solve(&self.factor, b)?;
        tri_solve_upper_t(&self.factor, &z)
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.factor.rows())
            .map(|i| self.factor[(i, i)].ln())
            .sum::<f64>()
    }
}

/// Plain Cholesky without jitter; `None` when a pivot is not strictly positive.
pub(crate) fn cholesky_raw(a: &Matrix, jitter: f64) -> Option<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)] + jitter;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

/// Factors `A + jitter·I = L·Lᵀ` with the smallest jitter in `jitter_schedule`
/// that succeeds.
pub fn cholesky(a: &Matrix, jitter_schedule: &[f64]) -> Result<Cholesky> {
    if !a.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "cholesky needs a square matrix, got {:?}",
            a.shape()
        )));
    }
    if a.max_abs_asymmetry() > SYMMETRY_TOL {
        return Err(Error::InvalidArgument("cholesky input is not symmetric".into()));
    }
    for &jitter in jitter_schedule {
        if let Some(factor) = cholesky_raw(a, jitter) {
            return Ok(Cholesky { factor, jitter });
        }
    }
    Err(Error::NotPositiveDefinite {
        max_jitter: jitter_schedule.last().copied().unwrap_or(0.0),
    })
}

/// Forward substitution: solves `L x = b` for lower-triangular `L`.
pub fn tri_solve(l: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    check_triangular_system(l, b.len())?;
    let n = b.len();
    let mut x = vec![0.0; n];
    for i in 0..n {
        let row = l.row(i);
        let s: f64 = row[..i].iter().zip(&x[..i]).map(|(a, b)| a * b).sum();
        x[i] = (b[i] - s) / row[i];
    }
    Ok(x)
}

/// Back substitution: solves `Lᵀ x = b` for lower-triangular `L`.
pub fn tri_solve_upper_t(l: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    check_triangular_system(l, b.len())?;
    let n = b.len();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    Ok(x)
}

fn check_triangular_system(l: &Matrix, n: usize) -> Result<()> {
    if !l.is_square() || l.rows() != n {
        return Err(Error::ShapeMismatch(format!(
            "triangular solve with {:?} matrix and length-{n} rhs",
            l.shape()
        )));
    }
    if let Some(index) = (0..n).find(|&i| l[(i, i)] == 0.0) {
        return Err(Error::SingularMatrix { index });
    }
    Ok(())
}

/// Column-wise forward substitution `L X = B`.
pub(crate) fn tri_solve_matrix(l: &Matrix, b: &Matrix) -> Matrix {
    let (n, m) = b.shape();
    let mut x = b.clone();
    for i in 0..n {
        for k in 0..i {
            let lik = l[(i, k)];
            if lik == 0.0 {
                continue;
            }
            for j in 0..m {
                let v = x[(k, j)];
                x[(i, j)] -= lik * v;
            }
        }
        let d = l[(i, i)];
        for j in 0..m {
            x[(i, j)] /= d;
        }
    }
    x
}

/// Column-wise back substitution `Lᵀ X = B`.
pub(crate) fn tri_solve_upper_t_matrix(l: &Matrix, b: &Matrix) -> Matrix {
    let (n, m) = b.shape();
    let mut x = b.clone();
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let lki = l[(k, i)];
            if lki == 0.0 {
                continue;
            }
            for j in 0..m {
                let v = x[(k, j)];
                x[(i, j)] -= lki * v;
            }
        }
        let d = l[(i, i)];
        for j in 0..m {
            x[(i, j)] /= d;
        }
    }
    x
}

/// `ln Σ exp(v_i)` with max-shift.
pub fn logsumexp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::EmptyInput("logsumexp of an empty vector"));
    }
    Ok(logsumexp_unchecked(v))
}

pub(crate) fn logsumexp_unchecked(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::dot;
use crate::error::{Error, Result};

/// Above this 2-norm condition number the fit is redone with a ridge term.
pub const CONDITION_LIMIT: f64 = 1e10;
const RIDGE_SCALE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    /// Uncentered: `1 - sse / |y|^2`.
    pub r_squared: f64,
    /// Mean absolute residual per dimension.
    pub mae: f64,
    pub sse: f64,
    pub condition: f64,
    pub ridge_used: bool,
}

/// No-intercept least squares: minimizes `|X b - y|^2` where `columns[j]`
/// is column `j` of `X`.
///
/// Solved by Householder QR. When `X` is rank deficient or its condition
/// number exceeds [`CONDITION_LIMIT`], the system is re-solved with ridge
/// `lambda = 1e-8 * |X|_F^2 / n` (as an augmented least-squares problem, so
/// the normal equations are never formed).
pub fn ols_solve(columns: &[Vec<f64>], y: &[f64]) -> Result<OlsFit> {
    let n = columns.len();
    let d = y.len();
    if n == 0 || d == 0 {
        return Err(Error::InvalidInput(format!(
            "design matrix must be non-empty (rows {d}, columns {n})"
        )));
    }
    for col in columns {
        if col.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: col.len(),
            });
        }
        if col.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("design matrix"));
        }
    }
    if y.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("response"));
    }

    let (mut coefficients, condition) = if n <= d {
        let qr = householder(columns.to_vec(), y.to_vec());
        let condition = condition_of(&qr.r);
        let beta = if condition <= CONDITION_LIMIT {
            Some(back_substitute(&qr.r, &qr.qty))
        } else {
            None
        };
        (beta, condition)
    } else {
        (None, f64::INFINITY)
    };

    let ridge_used = coefficients.is_none();
    if ridge_used {
        coefficients = Some(ridge_solve(columns, y)?);
    }
    let coefficients = coefficients.unwrap_or_default();

    let mut residual = y.to_vec();
    for (col, b) in columns.iter().zip(&coefficients) {
        for (r, x) in residual.iter_mut().zip(col) {
            *r -= b * x;
        }
    }
    let sse = dot(&residual, &residual);
    let mae = residual.iter().map(|r| r.abs()).sum::<f64>() / d as f64;
    let yy = dot(y, y);
    let r_squared = if yy > 0.0 { 1.0 - sse / yy } else { 1.0 };

    if coefficients.iter().any(|b| !b.is_finite()) {
        return Err(Error::NonFinite("coefficients"));
    }
    Ok(OlsFit {
        coefficients,
        r_squared,
        mae,
        sse,
        condition: condition.max(1.0),
        ridge_used,
    })
}

fn ridge_solve(columns: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    let n = columns.len();
    let frobenius_sq: f64 = columns.iter().map(|c| dot(c, c)).sum();
    if frobenius_sq == 0.0 {
        return Err(Error::DegenerateSample("design matrix is all zeros".into()));
    }
    let shift = (RIDGE_SCALE * frobenius_sq / n as f64).sqrt();
    let augmented: Vec<Vec<f64>> = columns
        .iter()
        .enumerate()
        .map(|(j, col)| {
            let mut c = col.clone();
            c.extend((0..n).map(|i| if i == j { shift } else { 0.0 }));
            c
        })
        .collect();
    let mut rhs = y.to_vec();
    rhs.resize(y.len() + n, 0.0);
    let qr = householder(augmented, rhs);
    Ok(back_substitute(&qr.r, &qr.qty))
}

struct Qr {
    /// `r[i][j]`, upper triangle only.
    r: Vec<Vec<f64>>,
    /// First `n` entries of `Q^T y`.
    qty: Vec<f64>,
}

fn householder(mut cols: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Qr {
    let n = cols.len();
    for k in 0..n {
        let norm = cols[k][k..].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if cols[k][k] > 0.0 { -norm } else { norm };
        let mut v = cols[k][k..].to_vec();
        v[0] -= alpha;
        let vv = dot(&v, &v);
        if vv == 0.0 {
            continue;
        }
        let reflect = |target: &mut [f64]| {
            let s = 2.0 * dot(&v, target) / vv;
            for (t, vi) in target.iter_mut().zip(&v) {
                *t -= s * vi;
            }
        };
        for col in cols.iter_mut().skip(k) {
            reflect(&mut col[k..]);
        }
        reflect(&mut rhs[k..]);
    }
    let r = (0..n)
        .map(|i| (0..n).map(|j| if j >= i { cols[j][i] } else { 0.0 }).collect())
        .collect();
    rhs.truncate(n);
    Qr { r, qty: rhs }
}

fn back_substitute(r: &[Vec<f64>], qty: &[f64]) -> Vec<f64> {
    let n = qty.len();
    let mut beta = vec![0.0; n];
    for i in (0..n).rev() {
        let tail: f64 = ((i + 1)..n).map(|j| r[i][j] * beta[j]).sum();
        beta[i] = (qty[i] - tail) / r[i][i];
    }
    beta
}

/// `cond_2(X) = cond_2(R)` since `Q` is orthogonal.
fn condition_of(r: &[Vec<f64>]) -> f64 {
    let n = r.len();
    if r.iter().enumerate().any(|(i, row)| row[i] == 0.0) {
        return f64::INFINITY;
    }
    let m = DMatrix::from_fn(n, n, |i, j| r[i][j]);
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthonormal_basis_recovers_y() {
        let fit = ols_solve(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.3, 0.4]).unwrap();
        assert!((fit.coefficients[0] - 0.3).abs() < 1e-15);
        assert!((fit.coefficients[1] - 0.4).abs() < 1e-15);
        assert!(fit.sse < 1e-30);
        assert!((fit.r_squared - 1.0).abs() < 1e-15);
        assert!(!fit.ridge_used);
        assert_eq!(fit.condition, 1.0);
    }

    #[test]
    fn single_column_projection() {
        // beta = s.y / |s|^2 = 0.6; residual (0, 0.8).
        let fit = ols_solve(&[vec![1.0, 0.0]], &[0.6, 0.8]).unwrap();
        assert!((fit.coefficients[0] - 0.6).abs() < 1e-15);
        assert!((fit.sse - 0.64).abs() < 1e-15);
        assert!((fit.r_squared - 0.36).abs() < 1e-15);
        assert!((fit.mae - 0.4).abs() < 1e-15);
    }

    #[test]
    fn duplicate_columns_fall_back_to_ridge() {
        let a = vec![0.6, 0.8, 0.0];
        let b = vec![0.0, 0.0, 1.0];
        let y = vec![0.3, 0.4, 0.5];
        let fit = ols_solve(&[a.clone(), b, a], &y).unwrap();
        assert!(fit.ridge_used);
        assert!(fit.condition > CONDITION_LIMIT);
        assert!(fit.coefficients.iter().all(|c| c.is_finite()));
        // Weight on the duplicated direction is split evenly.
        assert!((fit.coefficients[0] - fit.coefficients[2]).abs() < 1e-9);
        assert!((fit.coefficients[0] + fit.coefficients[2] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn more_columns_than_rows_uses_ridge() {
        let cols = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let fit = ols_solve(&cols, &[1.0, 2.0]).unwrap();
        assert!(fit.ridge_used);
        assert!(fit.sse < 1e-12);
    }

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert!(ols_solve(&[], &[1.0]).is_err());
        assert!(ols_solve(&[vec![]], &[]).is_err());
        assert!(ols_solve(&[vec![1.0, f64::NAN]], &[1.0, 0.0]).is_err());
        assert!(ols_solve(&[vec![1.0]], &[f64::INFINITY]).is_err());
        assert!(matches!(
            ols_solve(&[vec![1.0, 2.0]], &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_matrix_is_degenerate() {
        assert!(ols_solve(&[vec![0.0, 0.0]], &[1.0, 0.0]).is_err());
    }
}

//! Small dense helpers on top of `faer`.

use faer::prelude::*;
use faer::{Mat, MatRef, Side};

use crate::error::{PlmError, Result};

/// Eigendecomposition of a symmetric matrix, eigenvalues in ascending order.
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Mat<f64>,
}

pub fn sym_eigen(a: MatRef<'_, f64>) -> Result<SymEigen> {
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| PlmError::Numeric(format!("symmetric eigendecomposition failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let values = (0..s.nrows()).map(|i| s[i]).collect();
    Ok(SymEigen {
        values,
        vectors: evd.U().to_owned(),
    })
}

pub fn sym_eigenvalues(a: MatRef<'_, f64>) -> Result<Vec<f64>> {
    a.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| PlmError::Numeric(format!("symmetric eigenvalue solve failed: {e:?}")))
}

/// Solves `a x = rhs` for symmetric positive-definite `a` by Cholesky.
///
/// If the factorization fails, retries once with `jitter` added to the diagonal.
pub fn spd_solve(a: MatRef<'_, f64>, rhs: MatRef<'_, f64>, jitter: f64) -> Result<Mat<f64>> {
    if let Ok(llt) = a.llt(Side::Lower) {
        return Ok(llt.solve(rhs));
    }
    let n = a.nrows();
    let shifted = Mat::from_fn(n, n, |i, j| if i == j { a[(i, j)] + jitter } else { a[(i, j)] });
    let llt = shifted.llt(Side::Lower).map_err(|e| {
        PlmError::Numeric(format!(
            "cholesky factorization failed even with jitter {jitter:.3e}: {e:?}"
        ))
    })?;
    Ok(llt.solve(rhs))
}

pub fn symmetrize(a: &mut Mat<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

pub fn identity(n: usize) -> Mat<f64> {
    Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
}

pub fn frobenius(a: MatRef<'_, f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            s += a[(i, j)] * a[(i, j)];
        }
    }
    s.sqrt()
}

pub fn trace(a: MatRef<'_, f64>) -> f64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)]).sum()
}

pub fn col_from(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

pub fn mat_vec(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.ncols(), x.len());
    let mut out = vec![0.0; a.nrows()];
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        let col = a.col(j);
        for (i, o) in out.iter_mut().enumerate() {
            *o += col[i] * xj;
        }
    }
    out
}

/// `a' x`
pub fn mat_t_vec(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.nrows(), x.len());
    (0..a.ncols())
        .map(|j| {
            let col = a.col(j);
            x.iter().enumerate().map(|(i, &xi)| col[i] * xi).sum()
        })
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Keeps the listed rows of `a`, in the given order.
pub fn select_rows(a: MatRef<'_, f64>, rows: &[usize]) -> Mat<f64> {
    Mat::from_fn(rows.len(), a.ncols(), |i, j| a[(rows[i], j)])
}

pub fn select_block(a: MatRef<'_, f64>, rows: &[usize], cols: &[usize]) -> Mat<f64> {
    Mat::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spd_solve_recovers_rhs() {
        let a = Mat::from_fn(3, 3, |i, j| if i == j { 4.0 } else { 1.0 });
        let x = col_from(&[1.0, -2.0, 0.5]);
        let b = &a * &x;
        let got = spd_solve(a.as_ref(), b.as_ref(), 0.0).unwrap();
        for i in 0..3 {
            assert!((got[(i, 0)] - x[(i, 0)]).abs() < 1e-12);
        }
    }

    #[test]
    fn spd_solve_rejects_indefinite() {
        let a = Mat::from_fn(2, 2, |i, j| if i == j { -1.0 } else { 0.0 });
        let b = col_from(&[1.0, 1.0]);
        assert!(matches!(
            spd_solve(a.as_ref(), b.as_ref(), 1e-10),
            Err(PlmError::Numeric(_))
        ));
    }

    #[test]
    fn eigen_ascending() {
        let a = Mat::from_fn(3, 3, |i, j| if i == j { (i + 1) as f64 } else { 0.0 });
        let e = sym_eigen(a.as_ref()).unwrap();
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
    }
}

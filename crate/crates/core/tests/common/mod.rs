//! Independent dense-algebra oracles shared by the integration tests.
//! Nothing here calls the library's solvers.

#![allow(dead_code)]

use faer::{Mat, MatRef};
use plm_divide::datagen::{f_star, stream_rng, Shard};
use plm_divide::kernel::{gram_matrix, KernelSpec};
use rand::Rng;
use rand_distr::StandardNormal;

pub type Dense = Vec<Vec<f64>>;

pub fn dense(a: MatRef<'_, f64>) -> Dense {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect())
        .collect()
}

/// Gaussian elimination with partial pivoting; `None` when a pivot is below `1e-12` relative.
pub fn gauss_solve(mut a: Dense, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

pub fn invert(a: &Dense) -> Option<Dense> {
    let n = a.len();
    let cols: Option<Vec<Vec<f64>>> = (0..n)
        .map(|j| gauss_solve(a.clone(), (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect()))
        .collect();
    let cols = cols?;
    Some((0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect())
}

pub fn mul(a: &Dense, b: &Dense) -> Dense {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    (0..n)
        .map(|i| (0..m).map(|j| (0..k).map(|l| a[i][l] * b[l][j]).sum()).collect())
        .collect()
}

pub fn transpose(a: &Dense) -> Dense {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn mat_vec(a: &Dense, x: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(x).map(|(u, v)| u * v).sum()).collect()
}

/// `(I + K / (n lambda2))^{-1}`.
pub fn residual_smoother(k: &Dense, lambda2: f64) -> Dense {
    let n = k.len();
    let s = n as f64 * lambda2;
    let a: Dense = (0..n)
        .map(|i| (0..n).map(|j| k[i][j] / s + if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    invert(&a).expect("I + K/s is positive definite")
}

/// `G = X'MX/n`, `c = X'MY/n`, `yy = Y'MY/n`.
pub fn weighted_moments(x: &Dense, y: &[f64], m: &Dense) -> (Dense, Vec<f64>, f64) {
    let n = y.len() as f64;
    let mx = mul(m, x);
    let xt = transpose(x);
    let g: Dense = mul(&xt, &mx).into_iter().map(|r| r.into_iter().map(|v| v / n).collect()).collect();
    let my = mat_vec(m, y);
    let c: Vec<f64> = mat_vec(&xt, &my).into_iter().map(|v| v / n).collect();
    let yy = y.iter().zip(&my).map(|(a, b)| a * b).sum::<f64>() / n;
    (g, c, yy)
}

/// `0.5 yy - c'b + 0.5 b'Gb + lambda ||b||_1`.
pub fn lasso_objective(g: &Dense, c: &[f64], yy: f64, lambda: f64, b: &[f64]) -> f64 {
    let gb = mat_vec(g, b);
    let quad: f64 = b.iter().zip(&gb).map(|(u, v)| u * v).sum();
    let lin: f64 = b.iter().zip(c).map(|(u, v)| u * v).sum();
    let l1: f64 = b.iter().map(|v| v.abs()).sum();
    0.5 * yy - lin + 0.5 * quad + lambda * l1
}

/// Exact Lasso minimum by enumerating all `3^p` sign patterns: for each one,
/// solve the stationarity equations on its support and keep the best
/// sign-consistent solution.
pub fn sign_enumeration(g: &Dense, c: &[f64], yy: f64, lambda: f64) -> (f64, Vec<f64>) {
    let p = c.len();
    let mut best = (lasso_objective(g, c, yy, lambda, &vec![0.0; p]), vec![0.0; p]);
    let total = 3usize.pow(p as u32);
    for code in 0..total {
        let mut signs = vec![0.0; p];
        let mut rest = code;
        for s in signs.iter_mut() {
            *s = (rest % 3) as f64 - 1.0;
            rest /= 3;
        }
        let support: Vec<usize> = (0..p).filter(|&j| signs[j] != 0.0).collect();
        if support.is_empty() {
            continue;
        }
        let sub: Dense = support.iter().map(|&i| support.iter().map(|&j| g[i][j]).collect()).collect();
        let rhs: Vec<f64> = support.iter().map(|&i| c[i] - lambda * signs[i]).collect();
        let Some(sol) = gauss_solve(sub, rhs) else { continue };
        if support.iter().zip(&sol).any(|(&j, v)| v * signs[j] < 0.0) {
            continue;
        }
        let mut b = vec![0.0; p];
        for (&j, v) in support.iter().zip(&sol) {
            b[j] = *v;
        }
        let obj = lasso_objective(g, c, yy, lambda, &b);
        if obj < best.0 {
            best = (obj, b);
        }
    }
    best
}

/// Largest violation of the Lasso subgradient conditions.
pub fn kkt_violation(g: &Dense, c: &[f64], lambda: f64, b: &[f64]) -> f64 {
    let gb = mat_vec(g, b);
    (0..b.len())
        .map(|j| {
            let r = c[j] - gb[j];
            if b[j] == 0.0 {
                (r.abs() - lambda).max(0.0)
            } else {
                (r - lambda * b[j].signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// A partially linear instance with `beta = (1, -1, 0.5, 0, ...)` truncated to `p`,
/// unit noise and the default `f*`.
pub fn random_shard(n: usize, p: usize, seed: u64) -> Shard {
    let mut rng = stream_rng(seed, &[77]);
    let x = Mat::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let t: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let beta = [1.0, -1.0, 0.5];
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let lin: f64 = (0..p.min(3)).map(|j| x[(i, j)] * beta[j]).sum();
            lin + f_star(t[i]) + rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    Shard::from_parts(y, x, t).unwrap()
}

pub fn sobolev_gram(shard: &Shard) -> Mat<f64> {
    gram_matrix(&KernelSpec::sobolev3(), &shard.t).unwrap()
}

pub fn frobenius(a: &Dense) -> f64 {
    a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

//! The local double-penalized estimator.
//!
//! For fixed `beta` the kernel coefficients have the closed form
//! `a = (n lambda2 I + K)^{-1} (Y - X beta)`. Substituting back leaves the
//! profiled Lasso
//!
//! ```text
//! Q(beta) = (1/2n) (Y - X beta)' M (Y - X beta) + lambda1 ||beta||_1,   M = I - A(lambda2)
//! ```
//!
//! which is solved by coordinate descent on `X~ = M^{1/2} X`, `y~ = M^{1/2} Y`.

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::datagen::Shard;
use crate::error::{PlmError, Result};
use crate::kernel::{self, KernelEigen, KernelSpec};
use crate::lasso::{self, LassoOptions, QuadraticProblem};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl PenaltyConfig {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        let cfg = PenaltyConfig { lambda1, lambda2 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1.is_finite() && self.lambda1 >= 0.0) {
            return Err(PlmError::Argument(format!("lambda1 must be >= 0, got {}", self.lambda1)));
        }
        if !(self.lambda2.is_finite() && self.lambda2 > 0.0) {
            return Err(PlmError::Argument(format!("lambda2 must be > 0, got {}", self.lambda2)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LocalFit {
    pub beta_hat: Vec<f64>,
    pub a_hat: Vec<f64>,
    pub config: PenaltyConfig,
    pub shard_id: usize,
    pub kkt_residual: f64,
    pub objective_value: f64,
    pub sweeps: usize,
}

/// The weighted covariance problem for one `lambda2`: `G = X~'X~/n`, `c = X~'y~/n`.
#[derive(Debug, Clone)]
pub struct WeightedProblem {
    pub gram: Mat<f64>,
    pub corr: Vec<f64>,
    pub yy: f64,
    pub lambda2: f64,
}

impl WeightedProblem {
    pub fn as_problem(&self) -> QuadraticProblem<'_> {
        QuadraticProblem {
            gram: self.gram.as_ref(),
            corr: &self.corr,
            yy: self.yy,
            fixed_zero: None,
        }
    }
}

/// Per-shard cache: the Gram eigendecomposition plus `U'X` and `U'Y`.
///
/// Every `lambda2` reuses it, so a grid over `lambda2` costs one
/// eigendecomposition.
#[derive(Debug, Clone)]
pub struct ProfiledSystem {
    pub eigen: KernelEigen,
    ux: Mat<f64>,
    uy: Vec<f64>,
    shard_id: usize,
}

impl ProfiledSystem {
    pub fn new(shard: &Shard, gram: MatRef<'_, f64>) -> Result<Self> {
        let n = shard.n();
        if gram.nrows() != n || gram.ncols() != n {
            return Err(PlmError::Argument(format!(
                "gram is {}x{} but shard has {n} rows",
                gram.nrows(),
                gram.ncols()
            )));
        }
        if n < 2 {
            return Err(PlmError::Argument("a shard needs at least two rows".into()));
        }
        let eigen = KernelEigen::new(gram)?;
        let ux = eigen.project(shard.x.as_ref());
        let uy = eigen.project_vec(&shard.y);
        Ok(ProfiledSystem {
            eigen,
            ux,
            uy,
            shard_id: shard.machine_id,
        })
    }

    pub fn n(&self) -> usize {
        self.uy.len()
    }

    pub fn p(&self) -> usize {
        self.ux.ncols()
    }

    pub fn weighted(&self, lambda2: f64) -> WeightedProblem {
        let (n, p) = (self.n(), self.p());
        let root: Vec<f64> = self
            .eigen
            .residual_weights(lambda2)
            .into_iter()
            .map(f64::sqrt)
            .collect();
        // Rows of M^{1/2} X and M^{1/2} Y expressed in the eigenbasis.
        let wx = Mat::from_fn(n, p, |i, j| root[i] * self.ux[(i, j)]);
        let wy: Vec<f64> = root.iter().zip(&self.uy).map(|(r, v)| r * v).collect();
        let scale = 1.0 / n as f64;
        let mut gram = wx.transpose() * &wx;
        for j in 0..p {
            for i in 0..p {
                gram[(i, j)] *= scale;
            }
        }
        linalg::symmetrize(&mut gram);
        let corr = linalg::mat_t_vec(wx.as_ref(), &wy)
            .into_iter()
            .map(|v| v * scale)
            .collect();
        let yy = linalg::dot(&wy, &wy) * scale;
        WeightedProblem {
            gram,
            corr,
            yy,
            lambda2,
        }
    }

    /// `(n lambda2 I + K)^{-1} (Y - X beta)`.
    pub fn kernel_coefficients(&self, lambda2: f64, beta: &[f64]) -> Vec<f64> {
        let resid = self.projected_residual(beta);
        self.eigen
            .unproject_weighted(&self.eigen.inverse_weights(lambda2), &resid)
    }

    /// `X' M (Y - X beta) / n`, the negative gradient of the profiled loss.
    pub fn score(&self, lambda2: f64, beta: &[f64]) -> Vec<f64> {
        let w = self.eigen.residual_weights(lambda2);
        let wr: Vec<f64> = self
            .projected_residual(beta)
            .iter()
            .zip(&w)
            .map(|(r, w)| r * w)
            .collect();
        let n = self.n() as f64;
        linalg::mat_t_vec(self.ux.as_ref(), &wr)
            .into_iter()
            .map(|v| v / n)
            .collect()
    }

    fn projected_residual(&self, beta: &[f64]) -> Vec<f64> {
        let xb = linalg::mat_vec(self.ux.as_ref(), beta);
        self.uy.iter().zip(&xb).map(|(y, v)| y - v).collect()
    }

    pub fn fit(
        &self,
        config: PenaltyConfig,
        warm_start: Option<&[f64]>,
        opts: &LassoOptions,
    ) -> Result<LocalFit> {
        config.validate()?;
        let wp = self.weighted(config.lambda2);
        let sol = lasso::solve(&wp.as_problem(), config.lambda1, warm_start, opts)?;
        Ok(self.finish(config, sol))
    }

    /// Fits along a descending `lambda1` grid with warm starts, sharing one `lambda2`.
    pub fn fit_path(
        &self,
        lambda2: f64,
        lambda1_grid: &[f64],
        opts: &LassoOptions,
    ) -> Vec<Result<LocalFit>> {
        let wp = self.weighted(lambda2);
        lasso::solve_path(&wp.as_problem(), lambda1_grid, opts)
            .into_iter()
            .map(|res| {
                res.map(|sol| {
                    let config = PenaltyConfig {
                        lambda1: sol.lambda,
                        lambda2,
                    };
                    self.finish(config, sol)
                })
            })
            .collect()
    }

    fn finish(&self, config: PenaltyConfig, sol: lasso::LassoSolution) -> LocalFit {
        let a_hat = self.kernel_coefficients(config.lambda2, &sol.beta);
        LocalFit {
            beta_hat: sol.beta,
            a_hat,
            config,
            shard_id: self.shard_id,
            kkt_residual: sol.kkt_residual,
            objective_value: sol.objective,
            sweeps: sol.sweeps,
        }
    }
}

fn check_dims(shard: &Shard, gram: MatRef<'_, f64>, beta: &[f64]) -> Result<()> {
    if gram.nrows() != shard.n() || gram.ncols() != shard.n() || beta.len() != shard.p() {
        return Err(PlmError::Argument(format!(
            "dimension mismatch: shard {}x{}, gram {}x{}, beta {}",
            shard.n(),
            shard.p(),
            gram.nrows(),
            gram.ncols(),
            beta.len()
        )));
    }
    Ok(())
}

fn residual(shard: &Shard, beta: &[f64]) -> Vec<f64> {
    let xb = linalg::mat_vec(shard.x.as_ref(), beta);
    shard.y.iter().zip(&xb).map(|(y, v)| y - v).collect()
}

/// `Q(beta)`, evaluated through the dense smoother.
pub fn profiled_objective(
    shard: &Shard,
    gram: MatRef<'_, f64>,
    beta: &[f64],
    config: &PenaltyConfig,
) -> Result<f64> {
    check_dims(shard, gram, beta)?;
    config.validate()?;
    let sp = kernel::smoother_pair(gram, config.lambda2)?;
    let r = residual(shard, beta);
    let mr = linalg::mat_vec(sp.m.as_ref(), &r);
    let l1: f64 = beta.iter().map(|b| b.abs()).sum();
    Ok(linalg::dot(&r, &mr) / (2.0 * shard.n() as f64) + config.lambda1 * l1)
}

pub fn fit_local(shard: &Shard, gram: MatRef<'_, f64>, config: &PenaltyConfig) -> Result<LocalFit> {
    config.validate()?;
    ProfiledSystem::new(shard, gram)?.fit(*config, None, &LassoOptions::default())
}

/// `a = (n lambda2 I + K)^{-1} (Y - X beta)` by Cholesky.
pub fn recover_nonparametric(
    shard: &Shard,
    gram: MatRef<'_, f64>,
    beta: &[f64],
    lambda2: f64,
) -> Result<Vec<f64>> {
    check_dims(shard, gram, beta)?;
    if !(lambda2.is_finite() && lambda2 > 0.0) {
        return Err(PlmError::Argument(format!("lambda2 must be > 0, got {lambda2}")));
    }
    let n = shard.n();
    let shift = n as f64 * lambda2;
    let sys = Mat::from_fn(n, n, |i, j| gram[(i, j)] + if i == j { shift } else { 0.0 });
    let rhs = linalg::col_from(&residual(shard, beta));
    let jitter = 1e-10 * linalg::trace(gram).abs().max(f64::MIN_POSITIVE) / n as f64;
    let sol = linalg::spd_solve(sys.as_ref(), rhs.as_ref(), jitter)?;
    Ok((0..n).map(|i| sol[(i, 0)]).collect())
}

/// `x' beta + sum_i a_i k(T_i, t)`.
pub fn predict(
    fit: &LocalFit,
    shard: &Shard,
    spec: &KernelSpec,
    x_new: &[f64],
    t_new: &[f64],
) -> Result<f64> {
    if x_new.len() != fit.beta_hat.len() || fit.a_hat.len() != shard.n() {
        return Err(PlmError::Argument("prediction inputs do not match the fit".into()));
    }
    let q = spec.input_dim;
    if shard.t.len() != shard.n() * q {
        return Err(PlmError::Argument("shard T does not match kernel input_dim".into()));
    }
    let mut value = linalg::dot(x_new, &fit.beta_hat);
    for (i, a) in fit.a_hat.iter().enumerate() {
        value += a * spec.eval(&shard.t[i * q..(i + 1) * q], t_new)?;
    }
    Ok(value)
}

/// Predictions at many points: `X_new beta + K(T_new, T) a`.
pub fn predict_batch(
    fit: &LocalFit,
    shard: &Shard,
    spec: &KernelSpec,
    x_new: MatRef<'_, f64>,
    t_new: &[f64],
) -> Result<Vec<f64>> {
    let cross = kernel::cross_gram(spec, t_new, &shard.t)?;
    if cross.nrows() != x_new.nrows() {
        return Err(PlmError::Argument("x_new and t_new disagree on row count".into()));
    }
    let lin = linalg::mat_vec(x_new, &fit.beta_hat);
    let nonpar = linalg::mat_vec(cross.as_ref(), &fit.a_hat);
    Ok(lin.iter().zip(&nonpar).map(|(a, b)| a + b).collect())
}

/// The joint objective `(1/2n)||Y - X beta - K a||^2 + lambda1 ||beta||_1 + (lambda2/2) a'Ka`.
pub fn joint_objective(
    shard: &Shard,
    gram: MatRef<'_, f64>,
    beta: &[f64],
    a: &[f64],
    config: &PenaltyConfig,
) -> Result<f64> {
    check_dims(shard, gram, beta)?;
    if a.len() != shard.n() {
        return Err(PlmError::Argument("kernel coefficient length mismatch".into()));
    }
    let ka = linalg::mat_vec(gram, a);
    let r = residual(shard, beta);
    let fit_term: f64 = r.iter().zip(&ka).map(|(r, f)| (r - f) * (r - f)).sum();
    let l1: f64 = beta.iter().map(|b| b.abs()).sum();
    Ok(fit_term / (2.0 * shard.n() as f64)
        + config.lambda1 * l1
        + 0.5 * config.lambda2 * linalg::dot(a, &ka))
}

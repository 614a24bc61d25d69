//! Nodewise regression for an approximate inverse of the weighted covariance,
//! the one-step debiased local estimator, and the CEN/NAI/ABC aggregates.

use faer::{Mat, MatRef};
use rayon::prelude::*;

use crate::datagen::{Dataset, Shard};
use crate::error::{PlmError, Result};
use crate::kernel::{self, KernelSpec, SmootherPair};
use crate::lasso::{self, LassoOptions, QuadraticProblem};
use crate::linalg;
use crate::metrics::ErrorMetrics;
use crate::profiled_lasso::{self, LocalFit, PenaltyConfig, ProfiledSystem};

/// Below this, `tau_j^2` is treated as a degenerate column.
pub const MIN_TAU2: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct NodewiseFit {
    /// Row `j` holds `theta_j` in the coordinates `k != j`; the diagonal is zero.
    pub theta: Mat<f64>,
    pub tau2: Vec<f64>,
    /// Unit diagonal, `-theta_{j,k}` off the diagonal.
    pub c_hat: Mat<f64>,
    /// `T^{-2} C`.
    pub theta_hat: Mat<f64>,
    pub lambda0: f64,
    /// `max_j ||Theta_j Sigma - e_j||_inf`.
    pub gap: f64,
    /// `max_j lambda0 / tau_j^2`.
    pub gap_bound: f64,
    /// `max_j |Theta_j Sigma e_j - 1|`.
    pub diagonal_error: f64,
}

/// `sqrt(log p / n)`.
pub fn default_lambda0(p: usize, n: usize) -> f64 {
    ((p as f64).ln() / n as f64).sqrt()
}

/// `X~ = M^{1/2} X` through the dense smoother.
pub fn weighted_design(shard: &Shard, smoother: &SmootherPair) -> Result<Mat<f64>> {
    if smoother.n != shard.n() {
        return Err(PlmError::Argument(format!(
            "smoother is {}x{} but shard has {} rows",
            smoother.n,
            smoother.n,
            shard.n()
        )));
    }
    Ok(smoother.sqrt_m()? * &shard.x)
}

impl ProfiledSystem {
    /// `X~ = M^{1/2} X` from the cached eigendecomposition.
    pub fn weighted_design(&self, shard: &Shard, lambda2: f64) -> Result<Mat<f64>> {
        if shard.n() != self.n() || shard.p() != self.p() {
            return Err(PlmError::Argument("shard does not match the profiled system".into()));
        }
        let root: Vec<f64> = self
            .eigen
            .residual_weights(lambda2)
            .into_iter()
            .map(f64::sqrt)
            .collect();
        let ux = self.eigen.project(shard.x.as_ref());
        let scaled = Mat::from_fn(ux.nrows(), ux.ncols(), |i, j| root[i] * ux[(i, j)]);
        Ok(&self.eigen.vectors * &scaled)
    }
}

/// `X'X / n`
pub fn empirical_covariance(design: MatRef<'_, f64>) -> Mat<f64> {
    let n = design.nrows() as f64;
    let mut s = design.transpose() * design;
    for j in 0..s.ncols() {
        for i in 0..s.nrows() {
            s[(i, j)] /= n;
        }
    }
    linalg::symmetrize(&mut s);
    s
}

fn nodewise_options() -> LassoOptions {
    LassoOptions {
        change_tol: 1e-10,
        kkt_tol: 1e-9,
        ..LassoOptions::default()
    }
}

/// Nodewise Lasso regressions of each column of `design_tilde` on the rest,
/// with a common penalty `lambda0`.
pub fn nodewise(design_tilde: MatRef<'_, f64>, lambda0: f64) -> Result<NodewiseFit> {
    let (n, p) = (design_tilde.nrows(), design_tilde.ncols());
    if n < 2 || p < 2 {
        return Err(PlmError::Argument(format!("nodewise needs n >= 2 and p >= 2 (n={n}, p={p})")));
    }
    nodewise_from_covariance(empirical_covariance(design_tilde).as_ref(), lambda0)
}

pub fn nodewise_from_covariance(sigma: MatRef<'_, f64>, lambda0: f64) -> Result<NodewiseFit> {
    let p = sigma.nrows();
    if p < 2 || sigma.ncols() != p {
        return Err(PlmError::Argument("covariance must be square with p >= 2".into()));
    }
    if !(lambda0.is_finite() && lambda0 > 0.0) {
        return Err(PlmError::Argument(format!("lambda0 must be positive, got {lambda0}")));
    }
    let opts = nodewise_options();
    let rows: Vec<(Vec<f64>, f64, f64)> = (0..p)
        .into_par_iter()
        .map(|j| {
            let corr: Vec<f64> = (0..p).map(|k| if k == j { 0.0 } else { sigma[(k, j)] }).collect();
            let problem = QuadraticProblem {
                gram: sigma,
                corr: &corr,
                yy: sigma[(j, j)],
                fixed_zero: Some(j),
            };
            let sol = lasso::solve(&problem, lambda0, None, &opts)?;
            let l1: f64 = sol.beta.iter().map(|b| b.abs()).sum();
            // (1/n)||X_j - X_{-j} theta||^2 + lambda0 ||theta||_1 = 2 * objective - lambda0 ||theta||_1
            let tau2 = 2.0 * sol.objective - lambda0 * l1;
            if !(tau2 >= MIN_TAU2) {
                return Err(PlmError::DegenerateColumn { column: j, tau2 });
            }
            Ok((sol.beta, tau2, sol.kkt_residual))
        })
        .collect::<Result<_>>()?;

    let theta = Mat::from_fn(p, p, |j, k| rows[j].0[k]);
    let tau2: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let c_hat = Mat::from_fn(p, p, |j, k| if j == k { 1.0 } else { -theta[(j, k)] });
    let theta_hat = Mat::from_fn(p, p, |j, k| c_hat[(j, k)] / tau2[j]);

    let product = &theta_hat * sigma;
    let mut gap = 0.0_f64;
    let mut diagonal_error = 0.0_f64;
    let mut gap_bound = 0.0_f64;
    let mut slack = 0.0_f64;
    for j in 0..p {
        for k in 0..p {
            let target = if j == k { 1.0 } else { 0.0 };
            gap = gap.max((product[(j, k)] - target).abs());
        }
        diagonal_error = diagonal_error.max((product[(j, j)] - 1.0).abs());
        gap_bound = gap_bound.max(lambda0 / tau2[j]);
        slack = slack.max(rows[j].2 / tau2[j]);
    }
    if gap > gap_bound + slack + 1e-12 * gap_bound.max(1.0) {
        return Err(PlmError::Numeric(format!(
            "inverse-approximation bound violated: gap {gap:.3e} > {gap_bound:.3e}"
        )));
    }
    Ok(NodewiseFit {
        theta,
        tau2,
        c_hat,
        theta_hat,
        lambda0,
        gap,
        gap_bound,
        diagonal_error,
    })
}

/// `beta_hat + Theta * score`, where `score = X' M (Y - X beta_hat) / n`.
pub fn debias_with_score(beta_hat: &[f64], score: &[f64], theta_hat: MatRef<'_, f64>) -> Result<Vec<f64>> {
    let p = beta_hat.len();
    if score.len() != p || theta_hat.nrows() != p || theta_hat.ncols() != p {
        return Err(PlmError::Argument("debiasing dimensions disagree".into()));
    }
    let correction = linalg::mat_vec(theta_hat, score);
    Ok(beta_hat.iter().zip(&correction).map(|(b, c)| b + c).collect())
}

/// `beta_check = beta_hat + (1/n) Theta X' M (Y - X beta_hat)`.
pub fn debias_local(
    fit: &LocalFit,
    shard: &Shard,
    smoother: &SmootherPair,
    theta_hat: MatRef<'_, f64>,
) -> Result<Vec<f64>> {
    let (n, p) = (shard.n(), shard.p());
    if smoother.n != n || fit.beta_hat.len() != p {
        return Err(PlmError::Argument("fit, shard and smoother disagree".into()));
    }
    let xb = linalg::mat_vec(shard.x.as_ref(), &fit.beta_hat);
    let r: Vec<f64> = shard.y.iter().zip(&xb).map(|(y, v)| y - v).collect();
    let mr = linalg::mat_vec(smoother.m.as_ref(), &r);
    let score: Vec<f64> = linalg::mat_t_vec(shard.x.as_ref(), &mr)
        .into_iter()
        .map(|v| v / n as f64)
        .collect();
    debias_with_score(&fit.beta_hat, &score, theta_hat)
}

/// One machine's contribution to the aggregate.
#[derive(Debug, Clone)]
pub struct ShardEstimate {
    pub shard_id: usize,
    pub beta_hat: Vec<f64>,
    pub beta_check: Vec<f64>,
    pub gap: f64,
    pub config: PenaltyConfig,
    pub lambda0: f64,
}

#[derive(Debug, Clone)]
pub struct EstimatorErrors {
    pub cen: Option<ErrorMetrics>,
    pub nai: ErrorMetrics,
    pub abc: ErrorMetrics,
}

#[derive(Debug, Clone)]
pub struct AggregateResult {
    /// Mean of the debiased local estimates (ABC).
    pub beta_bar: Vec<f64>,
    /// Mean of the raw local estimates (NAI).
    pub beta_naive: Vec<f64>,
    /// Full-sample estimate (CEN), when computed.
    pub beta_cen: Option<Vec<f64>>,
    pub per_shard: Vec<ShardEstimate>,
}

fn coordinate_mean<'a>(vectors: impl Iterator<Item = &'a [f64]>, p: usize, m: usize) -> Vec<f64> {
    let mut acc = vec![0.0; p];
    for v in vectors {
        for (a, b) in acc.iter_mut().zip(v) {
            *a += b;
        }
    }
    acc.into_iter().map(|v| v / m as f64).collect()
}

pub fn aggregate(local: Vec<ShardEstimate>) -> Result<AggregateResult> {
    let m = local.len();
    let Some(first) = local.first() else {
        return Err(PlmError::Argument("cannot aggregate zero shards".into()));
    };
    let p = first.beta_hat.len();
    if local.iter().any(|s| s.beta_hat.len() != p || s.beta_check.len() != p) {
        return Err(PlmError::Argument("shards disagree on p".into()));
    }
    let beta_bar = coordinate_mean(local.iter().map(|s| s.beta_check.as_slice()), p, m);
    let beta_naive = coordinate_mean(local.iter().map(|s| s.beta_hat.as_slice()), p, m);
    Ok(AggregateResult {
        beta_bar,
        beta_naive,
        beta_cen: None,
        per_shard: local,
    })
}

impl AggregateResult {
    pub fn errors(&self, beta_star: &[f64]) -> Result<EstimatorErrors> {
        Ok(EstimatorErrors {
            cen: self
                .beta_cen
                .as_deref()
                .map(|b| ErrorMetrics::between(b, beta_star))
                .transpose()?,
            nai: ErrorMetrics::between(&self.beta_naive, beta_star)?,
            abc: ErrorMetrics::between(&self.beta_bar, beta_star)?,
        })
    }

    pub fn mean_gap(&self) -> f64 {
        self.per_shard.iter().map(|s| s.gap).sum::<f64>() / self.per_shard.len() as f64
    }
}

/// Full-sample profiled Lasso with the given penalties.
pub fn centralized(data: &Dataset, spec: &KernelSpec, config: &PenaltyConfig) -> Result<Vec<f64>> {
    let shard = data.as_shard();
    let gram = kernel::gram_matrix(spec, &shard.t)?;
    Ok(profiled_lasso::fit_local(&shard, gram.as_ref(), config)?.beta_hat)
}

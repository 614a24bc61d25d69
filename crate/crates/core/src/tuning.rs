//! K-fold cross-validation of `(lambda1, lambda2)` on one machine, and of the
//! nodewise penalty multiplier.

use faer::MatRef;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datagen::{stream_rng, Shard};
use crate::debias::{empirical_covariance, nodewise_from_covariance};
use crate::error::{PlmError, Result};
use crate::kernel::{self, KernelSpec};
use crate::lasso::{self, LassoOptions, QuadraticProblem};
use crate::linalg;
use crate::profiled_lasso::{PenaltyConfig, ProfiledSystem};

/// Shape of the default grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub folds: usize,
    pub n_lambda1: usize,
    /// Smallest `lambda1` as a fraction of the null threshold. Unset means
    /// `1e-3` when the training folds have at least `p` rows and `1e-2` otherwise.
    pub lambda1_ratio: Option<f64>,
    pub n_lambda2: usize,
    /// The `lambda2` grid spans `log(p)/N * 10^[-below, +above]`. The default
    /// reaches lower than it reaches higher because smooth kernels such as
    /// `sobolev3` have eigenvalues far below one.
    pub lambda2_decades_below: f64,
    pub lambda2_decades_above: f64,
    pub lambda0_multiplier: f64,
    /// Cross-validate the nodewise multiplier over `lambda0_grid`.
    pub tune_lambda0: bool,
    pub lambda0_grid: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            folds: 5,
            n_lambda1: 20,
            lambda1_ratio: None,
            n_lambda2: 10,
            lambda2_decades_below: 5.0,
            lambda2_decades_above: 1.0,
            lambda0_multiplier: 1.0,
            tune_lambda0: false,
            lambda0_grid: vec![0.25, 0.5, 1.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvPlan {
    pub k: usize,
    /// Descending.
    pub lambda1_grid: Vec<f64>,
    /// Ascending.
    pub lambda2_grid: Vec<f64>,
    pub lambda0_multipliers: Vec<f64>,
    pub seed: u64,
}

/// `count` points from `hi` down to `lo`, evenly spaced in log scale.
pub fn geometric_grid(hi: f64, lo: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![hi];
    }
    let (lh, ll) = (hi.ln(), lo.ln());
    (0..count)
        .map(|i| (lh + (ll - lh) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

impl CvPlan {
    pub fn new(
        k: usize,
        lambda1_grid: Vec<f64>,
        lambda2_grid: Vec<f64>,
        lambda0_multipliers: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        let plan = CvPlan {
            k,
            lambda1_grid,
            lambda2_grid,
            lambda0_multipliers,
            seed,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |g: &[f64]| !g.is_empty() && g.iter().all(|v| v.is_finite() && *v > 0.0);
        if self.k < 2 {
            return Err(PlmError::Argument(format!("need at least 2 folds, got {}", self.k)));
        }
        if !positive(&self.lambda1_grid) || self.lambda1_grid.windows(2).any(|w| w[1] > w[0]) {
            return Err(PlmError::Argument("lambda1 grid must be positive and descending".into()));
        }
        if !positive(&self.lambda2_grid) || self.lambda2_grid.windows(2).any(|w| w[1] < w[0]) {
            return Err(PlmError::Argument("lambda2 grid must be positive and ascending".into()));
        }
        if !positive(&self.lambda0_multipliers) {
            return Err(PlmError::Argument("lambda0 multipliers must be positive".into()));
        }
        Ok(())
    }

    /// Default grids for one machine: `lambda2` around `log(p) / N`, and `lambda1`
    /// from the largest null threshold over that `lambda2` grid down by `lambda1_ratio`.
    pub fn for_shard(
        system: &ProfiledSystem,
        total_n: usize,
        grid: &GridSpec,
        seed: u64,
    ) -> Result<Self> {
        let p = system.p();
        let center = (p.max(2) as f64).ln() / total_n as f64;
        let mut lambda2_grid = geometric_grid(
            center * 10f64.powf(grid.lambda2_decades_above),
            center * 10f64.powf(-grid.lambda2_decades_below),
            grid.n_lambda2,
        );
        lambda2_grid.reverse();
        let zero = vec![0.0; p];
        let top = lambda2_grid
            .iter()
            .map(|&l2| system.score(l2, &zero).iter().fold(0.0_f64, |m, v| m.max(v.abs())))
            .fold(0.0_f64, f64::max);
        if !(top > 0.0) {
            return Err(PlmError::Tuning("null threshold is zero; nothing to tune".into()));
        }
        let train_rows = system.n() - system.n().div_ceil(grid.folds.max(1));
        let ratio = grid
            .lambda1_ratio
            .unwrap_or(if train_rows >= p { 1e-3 } else { 1e-2 });
        let lambda1_grid = geometric_grid(top, top * ratio, grid.n_lambda1);
        let multipliers = if grid.tune_lambda0 {
            let mut g = grid.lambda0_grid.clone();
            g.sort_by(f64::total_cmp);
            g
        } else {
            vec![grid.lambda0_multiplier]
        };
        CvPlan::new(grid.folds, lambda1_grid, lambda2_grid, multipliers, seed)
    }
}

/// Held-out scoring only needs predictions, so fold fits stop earlier than final fits.
pub fn cv_options() -> LassoOptions {
    LassoOptions {
        change_tol: 1e-6,
        kkt_tol: 1e-4,
        ..LassoOptions::default()
    }
}

/// Seeded random split of `0..n` into `k` near-equal folds, each sorted.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream_rng(seed, &[0xF01D]));
    let mut folds: Vec<Vec<usize>> = (0..k)
        .map(|f| perm.iter().skip(f).step_by(k).copied().collect())
        .collect();
    for f in &mut folds {
        f.sort_unstable();
    }
    folds
}

fn complement(n: usize, fold: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &i in fold {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub config: PenaltyConfig,
    /// Mean held-out squared error, indexed `[lambda1][lambda2]`; `+inf` where a fit failed.
    pub scores: Vec<Vec<f64>>,
}

/// Whether `(l1, l2)` should replace the current best `(b1, b2)` at equal score.
fn prefer_on_tie(l1: f64, l2: f64, b1: f64, b2: f64) -> bool {
    l1 > b1 || (l1 == b1 && l2 > b2)
}

pub fn cv_select(shard: &Shard, spec: &KernelSpec, plan: &CvPlan) -> Result<PenaltyConfig> {
    let gram = kernel::gram_matrix(spec, &shard.t)?;
    Ok(cv_select_with_gram(shard, gram.as_ref(), plan)?.config)
}

/// Cross-validation reusing the shard's Gram matrix for every fold.
pub fn cv_select_with_gram(shard: &Shard, gram: MatRef<'_, f64>, plan: &CvPlan) -> Result<CvOutcome> {
    plan.validate()?;
    let n = shard.n();
    if n < 2 * plan.k {
        return Err(PlmError::Argument(format!(
            "shard of {n} rows is too small for {}-fold cross-validation",
            plan.k
        )));
    }
    let (n1, n2) = (plan.lambda1_grid.len(), plan.lambda2_grid.len());
    let mut fold_scores: Vec<Vec<Vec<f64>>> = Vec::with_capacity(plan.k);
    let opts = cv_options();

    for test in make_folds(n, plan.k, plan.seed) {
        let train = complement(n, &test);
        let train_shard = shard.subset(&train);
        let test_shard = shard.subset(&test);
        let k_train = linalg::select_block(gram, &train, &train);
        let k_cross = linalg::select_block(gram, &test, &train);
        let mut scores = vec![vec![f64::INFINITY; n2]; n1];
        let system = match ProfiledSystem::new(&train_shard, k_train.as_ref()) {
            Ok(s) => s,
            Err(_) => {
                fold_scores.push(scores);
                continue;
            }
        };
        for (c2, &lambda2) in plan.lambda2_grid.iter().enumerate() {
            for (c1, fit) in system.fit_path(lambda2, &plan.lambda1_grid, &opts).into_iter().enumerate() {
                let Ok(fit) = fit else { continue };
                let lin = linalg::mat_vec(test_shard.x.as_ref(), &fit.beta_hat);
                let nonpar = linalg::mat_vec(k_cross.as_ref(), &fit.a_hat);
                let mse = test_shard
                    .y
                    .iter()
                    .zip(lin.iter().zip(&nonpar))
                    .map(|(y, (a, b))| (y - a - b).powi(2))
                    .sum::<f64>()
                    / test.len() as f64;
                if mse.is_finite() {
                    scores[c1][c2] = mse;
                }
            }
        }
        fold_scores.push(scores);
    }

    let scores: Vec<Vec<f64>> = (0..n1)
        .map(|c1| {
            (0..n2)
                .map(|c2| {
                    let mut per_fold: Vec<f64> = fold_scores.iter().map(|f| f[c1][c2]).collect();
                    // Fixed summation order regardless of fold order.
                    per_fold.sort_by(f64::total_cmp);
                    per_fold.iter().sum::<f64>() / plan.k as f64
                })
                .collect()
        })
        .collect();

    let mut best: Option<(f64, f64, f64)> = None;
    for (c1, &l1) in plan.lambda1_grid.iter().enumerate() {
        for (c2, &l2) in plan.lambda2_grid.iter().enumerate() {
            let s = scores[c1][c2];
            if !s.is_finite() {
                continue;
            }
            best = match best {
                None => Some((s, l1, l2)),
                Some((bs, b1, b2)) if s < bs || (s == bs && prefer_on_tie(l1, l2, b1, b2)) => {
                    Some((s, l1, l2))
                }
                keep => keep,
            };
        }
    }
    let (_, lambda1, lambda2) =
        best.ok_or_else(|| PlmError::Tuning("every grid point failed to fit".into()))?;
    Ok(CvOutcome {
        config: PenaltyConfig { lambda1, lambda2 },
        scores,
    })
}

/// Picks the nodewise multiplier `c` in `lambda0 = c * base` by held-out
/// prediction error of the column regressions, summed over columns.
/// Ties go to the larger multiplier.
pub fn cv_lambda0(
    design_tilde: MatRef<'_, f64>,
    base: f64,
    multipliers: &[f64],
    k: usize,
    seed: u64,
) -> Result<f64> {
    if multipliers.len() == 1 {
        return Ok(multipliers[0]);
    }
    let (n, p) = (design_tilde.nrows(), design_tilde.ncols());
    if n < 2 * k {
        return Err(PlmError::Argument("too few rows to cross-validate lambda0".into()));
    }
    let opts = cv_options();
    let mut totals = vec![0.0; multipliers.len()];
    for test in make_folds(n, k, seed ^ 0x1A0) {
        let train = complement(n, &test);
        let x_train = linalg::select_rows(design_tilde, &train);
        let x_test = linalg::select_rows(design_tilde, &test);
        let sigma = empirical_covariance(x_train.as_ref());
        for (c, &mult) in multipliers.iter().enumerate() {
            let lambda0 = mult * base;
            let mut score = 0.0;
            for j in 0..p {
                let corr: Vec<f64> = (0..p).map(|l| if l == j { 0.0 } else { sigma[(l, j)] }).collect();
                let problem = QuadraticProblem {
                    gram: sigma.as_ref(),
                    corr: &corr,
                    yy: sigma[(j, j)],
                    fixed_zero: Some(j),
                };
                match lasso::solve(&problem, lambda0, None, &opts) {
                    Ok(sol) => {
                        let pred = linalg::mat_vec(x_test.as_ref(), &sol.beta);
                        score += (0..test.len())
                            .map(|i| (x_test[(i, j)] - pred[i]).powi(2))
                            .sum::<f64>()
                            / test.len() as f64;
                    }
                    Err(_) => score = f64::INFINITY,
                }
            }
            totals[c] += score;
        }
    }
    let mut best: Option<(f64, f64)> = None;
    for (&mult, &s) in multipliers.iter().zip(&totals) {
        if !s.is_finite() {
            continue;
        }
        best = match best {
            None => Some((s, mult)),
            Some((bs, bm)) if s < bs || (s == bs && mult > bm) => Some((s, mult)),
            keep => keep,
        };
    }
    // Sanity check that the chosen penalty yields a usable nodewise fit.
    let (_, mult) = best.ok_or_else(|| PlmError::Tuning("every lambda0 multiplier failed".into()))?;
    nodewise_from_covariance(empirical_covariance(design_tilde).as_ref(), mult * base)?;
    Ok(mult)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{partition, sample_dataset, SimDesign};

    fn small_shard(seed: u64) -> Shard {
        let data = sample_dataset(&SimDesign::new(60, 6, 1, seed)).unwrap();
        partition(&data, 1, seed).unwrap().remove(0)
    }

    #[test]
    fn folds_partition_rows() {
        let folds = make_folds(23, 5, 3);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert!(folds.iter().all(|f| f.len() == 4 || f.len() == 5));
    }

    #[test]
    fn single_point_grid() {
        let shard = small_shard(1);
        let plan = CvPlan::new(5, vec![0.1], vec![0.01], vec![1.0], 4).unwrap();
        let cfg = cv_select(&shard, &KernelSpec::sobolev3(), &plan).unwrap();
        assert_eq!(cfg, PenaltyConfig { lambda1: 0.1, lambda2: 0.01 });
    }

    #[test]
    fn duplicated_grid_point_same_choice() {
        let shard = small_shard(2);
        let spec = KernelSpec::sobolev3();
        let plan = CvPlan::new(5, vec![0.5, 0.1, 0.02], vec![0.001, 0.01], vec![1.0], 4).unwrap();
        let dup = CvPlan::new(5, vec![0.5, 0.1, 0.1, 0.02], vec![0.001, 0.01, 0.01], vec![1.0], 4).unwrap();
        assert_eq!(cv_select(&shard, &spec, &plan).unwrap(), cv_select(&shard, &spec, &dup).unwrap());
    }

    #[test]
    fn deterministic_selection() {
        let shard = small_shard(3);
        let gram = kernel::gram_matrix(&KernelSpec::sobolev3(), &shard.t).unwrap();
        let system = ProfiledSystem::new(&shard, gram.as_ref()).unwrap();
        let plan = CvPlan::for_shard(&system, 60, &GridSpec::default(), 9).unwrap();
        assert_eq!(plan.lambda1_grid.len(), 20);
        assert_eq!(plan.lambda2_grid.len(), 10);
        let a = cv_select_with_gram(&shard, gram.as_ref(), &plan).unwrap();
        let b = cv_select_with_gram(&shard, gram.as_ref(), &plan).unwrap();
        assert_eq!(a.config, b.config);
        assert!(a.scores.iter().flatten().all(|s| *s >= 0.0));
    }

    #[test]
    fn rejects_bad_plans() {
        assert!(CvPlan::new(1, vec![0.1], vec![0.1], vec![1.0], 0).is_err());
        assert!(CvPlan::new(5, vec![0.1, 0.2], vec![0.1], vec![1.0], 0).is_err());
        assert!(CvPlan::new(5, vec![0.1], vec![], vec![1.0], 0).is_err());
        let shard = small_shard(4).subset(&[0, 1, 2, 3, 4, 5, 6, 7, 8]);
        let plan = CvPlan::new(5, vec![0.1], vec![0.1], vec![1.0], 0).unwrap();
        assert!(cv_select(&shard, &KernelSpec::sobolev3(), &plan).is_err());
    }

    #[test]
    fn lambda0_cv_returns_a_grid_member() {
        let shard = small_shard(5);
        let mult = cv_lambda0(shard.x.as_ref(), 0.2, &[0.5, 1.0, 2.0], 5, 1).unwrap();
        assert!([0.5, 1.0, 2.0].contains(&mult));
    }

    #[test]
    fn geometric_grid_endpoints() {
        let g = geometric_grid(1.0, 1e-3, 4);
        assert!((g[0] - 1.0).abs() < 1e-15);
        assert!((g[3] - 1e-3).abs() < 1e-15);
        assert!((g[1] - 0.1).abs() < 1e-14);
    }
}

//! Cyclic coordinate descent for the Lasso in covariance form.
//!
//! The problem is
//!
//! ```text
//! min_b  yy/2 - c'b + b'Gb/2 + lambda ||b||_1
//! ```
//!
//! with `G = X'X/n`, `c = X'y/n` and `yy = y'y/n`, which is
//! `(1/2n)||y - Xb||^2 + lambda ||b||_1` written without touching `X`.

use faer::prelude::*;
use faer::{Mat, MatRef, Side};

use crate::error::{PlmError, Result};

#[derive(Debug, Clone, Copy)]
pub struct QuadraticProblem<'a> {
    pub gram: MatRef<'a, f64>,
    pub corr: &'a [f64],
    pub yy: f64,
    /// Coordinate held at zero (the response column in nodewise regression).
    pub fixed_zero: Option<usize>,
}

impl<'a> QuadraticProblem<'a> {
    pub fn new(gram: MatRef<'a, f64>, corr: &'a [f64], yy: f64) -> Result<Self> {
        if gram.nrows() != gram.ncols() || gram.nrows() != corr.len() {
            return Err(PlmError::Argument(format!(
                "gram is {}x{} but corr has length {}",
                gram.nrows(),
                gram.ncols(),
                corr.len()
            )));
        }
        Ok(QuadraticProblem {
            gram,
            corr,
            yy,
            fixed_zero: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.corr.len()
    }

    fn is_free(&self, j: usize) -> bool {
        self.fixed_zero != Some(j)
    }

    fn column(&self, j: usize) -> &'a [f64] {
        self.gram
            .col(j)
            .try_as_col_major()
            .expect("gram columns are contiguous")
            .as_slice()
    }

    fn gram_times(&self, beta: &[f64]) -> Vec<f64> {
        let mut q = vec![0.0; self.dim()];
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                for (qi, gij) in q.iter_mut().zip(self.column(j)) {
                    *qi += gij * b;
                }
            }
        }
        q
    }

    /// `max_j |c_j|`: the smallest lambda whose solution is identically zero.
    pub fn null_threshold(&self) -> f64 {
        self.corr
            .iter()
            .enumerate()
            .filter(|(j, _)| self.is_free(*j))
            .map(|(_, c)| c.abs())
            .fold(0.0, f64::max)
    }

    pub fn objective(&self, beta: &[f64], lambda: f64) -> f64 {
        let q = self.gram_times(beta);
        self.objective_with(beta, &q, lambda)
    }

    fn objective_with(&self, beta: &[f64], q: &[f64], lambda: f64) -> f64 {
        let mut quad = 0.0;
        let mut lin = 0.0;
        let mut l1 = 0.0;
        for j in 0..beta.len() {
            quad += beta[j] * q[j];
            lin += self.corr[j] * beta[j];
            l1 += beta[j].abs();
        }
        0.5 * self.yy - lin + 0.5 * quad + lambda * l1
    }

    /// Largest violation of the subgradient conditions.
    pub fn kkt_residual(&self, beta: &[f64], lambda: f64) -> f64 {
        let q = self.gram_times(beta);
        self.kkt_with(beta, &q, lambda)
    }

    fn kkt_with(&self, beta: &[f64], q: &[f64], lambda: f64) -> f64 {
        let mut worst = 0.0_f64;
        for j in 0..beta.len() {
            if !self.is_free(j) {
                continue;
            }
            let r = self.corr[j] - q[j];
            let v = if beta[j] == 0.0 {
                (r.abs() - lambda).max(0.0)
            } else {
                (r - lambda * beta[j].signum()).abs()
            };
            worst = worst.max(v);
        }
        worst
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LassoOptions {
    /// Stop sweeping once no coordinate moves by more than this.
    pub change_tol: f64,
    pub kkt_tol: f64,
    pub max_sweeps: usize,
    /// Re-solve the active set exactly after convergence.
    pub polish: bool,
    pub record_trace: bool,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions {
            change_tol: 1e-8,
            kkt_tol: 1e-6,
            max_sweeps: 100_000,
            polish: true,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LassoSolution {
    pub beta: Vec<f64>,
    pub lambda: f64,
    pub objective: f64,
    pub kkt_residual: f64,
    pub sweeps: usize,
    /// Objective after each sweep, when requested.
    pub trace: Vec<f64>,
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

struct State<'p, 'a> {
    problem: &'p QuadraticProblem<'a>,
    lambda: f64,
    beta: Vec<f64>,
    q: Vec<f64>,
}

impl State<'_, '_> {
    /// Exact minimization along coordinate `j`. Returns the absolute change.
    fn update(&mut self, j: usize) -> f64 {
        let g = self.problem.column(j);
        let gjj = g[j];
        let old = self.beta[j];
        let new = if gjj > 0.0 {
            soft_threshold(self.problem.corr[j] - self.q[j] + gjj * old, self.lambda) / gjj
        } else {
            0.0
        };
        let delta = new - old;
        if delta != 0.0 {
            self.beta[j] = new;
            for (qi, gij) in self.q.iter_mut().zip(g) {
                *qi += gij * delta;
            }
        }
        delta.abs()
    }
}

pub fn solve(
    problem: &QuadraticProblem<'_>,
    lambda: f64,
    warm_start: Option<&[f64]>,
    opts: &LassoOptions,
) -> Result<LassoSolution> {
    let p = problem.dim();
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(PlmError::Argument(format!("lambda must be >= 0, got {lambda}")));
    }
    let mut beta = match warm_start {
        Some(w) if w.len() == p => w.to_vec(),
        Some(w) => {
            return Err(PlmError::Argument(format!(
                "warm start has length {} but problem has {p} coordinates",
                w.len()
            )))
        }
        None => vec![0.0; p],
    };
    if let Some(j) = problem.fixed_zero {
        beta[j] = 0.0;
    }
    let q = problem.gram_times(&beta);
    let mut st = State {
        problem,
        lambda,
        beta,
        q,
    };
    let free: Vec<usize> = (0..p).filter(|&j| problem.is_free(j)).collect();
    let mut trace = Vec::new();
    let mut sweeps = 0usize;
    // Sweep counts at which an exact active-set solve is tried; doubling keeps
    // the total cost of failed attempts small.
    let mut next_shortcut = 8usize;
    let mut kkt;
    let mut shortcut: Option<Vec<f64>> = None;

    'outer: loop {
        // Full pass, which also refreshes the active set.
        let mut max_change = 0.0_f64;
        for &j in &free {
            max_change = max_change.max(st.update(j));
        }
        sweeps += 1;
        if opts.record_trace {
            trace.push(problem.objective_with(&st.beta, &st.q, lambda));
        }
        if max_change < opts.change_tol {
            // Drop accumulated drift before judging optimality.
            st.q = problem.gram_times(&st.beta);
            kkt = problem.kkt_with(&st.beta, &st.q, lambda);
            if kkt < opts.kkt_tol {
                break;
            }
        }
        let active: Vec<usize> = free.iter().copied().filter(|&j| st.beta[j] != 0.0).collect();
        loop {
            if sweeps >= opts.max_sweeps {
                let kkt_residual = problem.kkt_residual(&st.beta, lambda);
                return Err(PlmError::Convergence {
                    sweeps,
                    kkt_residual,
                    last_iterate: st.beta,
                });
            }
            if opts.polish && sweeps >= next_shortcut {
                next_shortcut = 2 * sweeps;
                if let Some(b) = polish(problem, &st.beta, lambda) {
                    let bk = problem.kkt_residual(&b, lambda);
                    if bk < opts.kkt_tol {
                        kkt = bk;
                        shortcut = Some(b);
                        break 'outer;
                    }
                }
            }
            let mut change = 0.0_f64;
            for &j in &active {
                change = change.max(st.update(j));
            }
            sweeps += 1;
            if opts.record_trace {
                trace.push(problem.objective_with(&st.beta, &st.q, lambda));
            }
            if change < opts.change_tol {
                break;
            }
        }
    }

    let mut beta = st.beta;
    if let Some(b) = shortcut {
        beta = b;
    } else if opts.polish {
        if let Some(polished) = polish(problem, &beta, lambda) {
            let pk = problem.kkt_residual(&polished, lambda);
            if pk <= kkt {
                beta = polished;
                kkt = pk;
            }
        }
    }
    let objective = problem.objective(&beta, lambda);
    Ok(LassoSolution {
        beta,
        lambda,
        objective,
        kkt_residual: kkt,
        sweeps,
        trace,
    })
}

/// Solves the stationarity equations on the active set with the signs fixed.
/// Returns `None` if the system is singular or a sign flips.
fn polish(problem: &QuadraticProblem<'_>, beta: &[f64], lambda: f64) -> Option<Vec<f64>> {
    let active: Vec<usize> = (0..beta.len()).filter(|&j| beta[j] != 0.0).collect();
    if active.is_empty() {
        return None;
    }
    let k = active.len();
    let g = Mat::from_fn(k, k, |a, b| problem.gram[(active[a], active[b])]);
    let rhs = Mat::from_fn(k, 1, |a, _| {
        problem.corr[active[a]] - lambda * beta[active[a]].signum()
    });
    let sol = g.llt(Side::Lower).ok()?.solve(rhs.as_ref());
    let mut out = vec![0.0; beta.len()];
    for (a, &j) in active.iter().enumerate() {
        let v = sol[(a, 0)];
        if !v.is_finite() || v.signum() != beta[j].signum() {
            return None;
        }
        out[j] = v;
    }
    Some(out)
}

/// Solutions along a descending `lambdas` grid, each warm-started from the previous.
///
/// A failed point does not stop the path; the next point restarts from the
/// last successful solution.
pub fn solve_path(
    problem: &QuadraticProblem<'_>,
    lambdas: &[f64],
    opts: &LassoOptions,
) -> Vec<Result<LassoSolution>> {
    let mut warm: Option<Vec<f64>> = None;
    lambdas
        .iter()
        .map(|&lambda| {
            let res = solve(problem, lambda, warm.as_deref(), opts);
            if let Ok(sol) = &res {
                warm = Some(sol.beta.clone());
            }
            res
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_problem(n: usize, p: usize, seed: u64) -> (Mat<f64>, Vec<f64>, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Mat::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let g = Mat::from_fn(p, p, |a, b| (0..n).map(|i| x[(i, a)] * x[(i, b)]).sum::<f64>() / n as f64);
        let c: Vec<f64> = (0..p).map(|a| (0..n).map(|i| x[(i, a)] * y[i]).sum::<f64>() / n as f64).collect();
        let yy = linalg::dot(&y, &y) / n as f64;
        (g, c, yy)
    }

    #[test]
    fn scalar_soft_threshold() {
        let g = Mat::from_fn(1, 1, |_, _| 2.0);
        let c = [0.7];
        let prob = QuadraticProblem::new(g.as_ref(), &c, 1.0).unwrap();
        let sol = solve(&prob, 0.3, None, &LassoOptions::default()).unwrap();
        assert!((sol.beta[0] - 0.2).abs() < 1e-14);
        let sol = solve(&prob, 0.8, None, &LassoOptions::default()).unwrap();
        assert_eq!(sol.beta[0], 0.0);
    }

    #[test]
    fn null_threshold_gives_zero() {
        let (g, c, yy) = random_problem(40, 6, 3);
        let prob = QuadraticProblem::new(g.as_ref(), &c, yy).unwrap();
        let sol = solve(&prob, prob.null_threshold(), None, &LassoOptions::default()).unwrap();
        assert!(sol.beta.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn objective_trace_is_nonincreasing() {
        let (g, c, yy) = random_problem(30, 8, 5);
        let prob = QuadraticProblem::new(g.as_ref(), &c, yy).unwrap();
        let opts = LassoOptions {
            record_trace: true,
            polish: false,
            ..Default::default()
        };
        let sol = solve(&prob, 0.05, None, &opts).unwrap();
        assert!(sol.trace.len() >= 2);
        for w in sol.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-14 * w[0].abs().max(1.0));
        }
        assert!(sol.kkt_residual < 1e-6);
    }

    #[test]
    fn fixed_coordinate_stays_zero() {
        let (g, c, yy) = random_problem(30, 5, 9);
        let mut prob = QuadraticProblem::new(g.as_ref(), &c, yy).unwrap();
        prob.fixed_zero = Some(2);
        let sol = solve(&prob, 0.01, None, &LassoOptions::default()).unwrap();
        assert_eq!(sol.beta[2], 0.0);
        assert!(sol.kkt_residual < 1e-10);
    }

    #[test]
    fn path_warm_starts_match_cold() {
        let (g, c, yy) = random_problem(50, 7, 21);
        let prob = QuadraticProblem::new(g.as_ref(), &c, yy).unwrap();
        let top = prob.null_threshold();
        let grid: Vec<f64> = (0..8).map(|k| top * 0.5f64.powi(k)).collect();
        let path = solve_path(&prob, &grid, &LassoOptions::default());
        for (lam, res) in grid.iter().zip(path) {
            let warm = res.unwrap();
            let cold = solve(&prob, *lam, None, &LassoOptions::default()).unwrap();
            for (a, b) in warm.beta.iter().zip(&cold.beta) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn sweep_limit_reports_convergence_error() {
        let (g, c, yy) = random_problem(30, 6, 2);
        let prob = QuadraticProblem::new(g.as_ref(), &c, yy).unwrap();
        let opts = LassoOptions {
            max_sweeps: 1,
            change_tol: 0.0,
            ..Default::default()
        };
        match solve(&prob, 0.001, None, &opts) {
            Err(PlmError::Convergence { last_iterate, .. }) => assert_eq!(last_iterate.len(), 6),
            other => panic!("expected convergence error, got {other:?}"),
        }
    }
}

//! Kernels on `[0, 1]^q`, Gram and smoother matrices, and the RKHS
//! complexity quantities `Q_n(r)`, the critical radius `nu_n` and `gamma_n`.

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{PlmError, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    /// Reproducing kernel of the order-3 Sobolev space on `[0, 1]`.
    Sobolev3,
    Gaussian,
    Laplace,
}

impl std::str::FromStr for KernelKind {
    type Err = PlmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sobolev3" => Ok(KernelKind::Sobolev3),
            "gaussian" => Ok(KernelKind::Gaussian),
            "laplace" => Ok(KernelKind::Laplace),
            other => Err(PlmError::Argument(format!("unknown kernel '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// Ignored by `sobolev3`.
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
    #[serde(default = "default_input_dim")]
    pub input_dim: usize,
}

fn default_bandwidth() -> f64 {
    0.1
}

fn default_input_dim() -> usize {
    1
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::sobolev3()
    }
}

// Scaled Bernoulli polynomials k_v(x) = B_v(x) / v!.
fn k1(x: f64) -> f64 {
    x - 0.5
}

fn k2(x: f64) -> f64 {
    (x * x - x + 1.0 / 6.0) / 2.0
}

fn k6(x: f64) -> f64 {
    let x2 = x * x;
    let b6 = x2 * x2 * x2 - 3.0 * x2 * x2 * x + 2.5 * x2 * x2 - 0.5 * x2 + 1.0 / 42.0;
    b6 / 720.0
}

impl KernelSpec {
    pub fn sobolev3() -> Self {
        KernelSpec {
            kind: KernelKind::Sobolev3,
            bandwidth: default_bandwidth(),
            input_dim: 1,
        }
    }

    pub fn gaussian(bandwidth: f64, input_dim: usize) -> Self {
        KernelSpec {
            kind: KernelKind::Gaussian,
            bandwidth,
            input_dim,
        }
    }

    pub fn laplace(bandwidth: f64, input_dim: usize) -> Self {
        KernelSpec {
            kind: KernelKind::Laplace,
            bandwidth,
            input_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(PlmError::Argument("kernel input_dim must be positive".into()));
        }
        match self.kind {
            KernelKind::Sobolev3 if self.input_dim != 1 => Err(PlmError::Argument(
                "sobolev3 kernel is defined for one-dimensional inputs only".into(),
            )),
            KernelKind::Gaussian | KernelKind::Laplace
                if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) =>
            {
                Err(PlmError::Argument(format!(
                    "bandwidth must be positive, got {}",
                    self.bandwidth
                )))
            }
            _ => Ok(()),
        }
    }

    /// `sup_t |k(t, t)|`.
    pub fn kappa(&self) -> f64 {
        match self.kind {
            // k1^2 and k2^2 peak at the endpoints, k6(0) is constant on the diagonal.
            KernelKind::Sobolev3 => 1.0 + k1(0.0).powi(2) + k2(0.0).powi(2) + k6(0.0),
            KernelKind::Gaussian | KernelKind::Laplace => 1.0,
        }
    }

    fn check_point(&self, t: &[f64]) -> Result<()> {
        if t.len() != self.input_dim || t.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(PlmError::Domain {
                point: t.to_vec(),
                dim: self.input_dim,
            });
        }
        Ok(())
    }

    // Assumes both points were already checked.
    fn eval_unchecked(&self, s: &[f64], t: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Sobolev3 => {
                let (s, t) = (s[0], t[0]);
                1.0 + k1(s) * k1(t) + k2(s) * k2(t) + k6((s - t).abs())
            }
            KernelKind::Gaussian => {
                let d2: f64 = s.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * self.bandwidth * self.bandwidth)).exp()
            }
            KernelKind::Laplace => {
                let d2: f64 = s.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2.sqrt() / self.bandwidth).exp()
            }
        }
    }

    pub fn eval(&self, s: &[f64], t: &[f64]) -> Result<f64> {
        self.check_point(s)?;
        self.check_point(t)?;
        Ok(self.eval_unchecked(s, t))
    }

    fn check_points(&self, points: &[f64]) -> Result<usize> {
        self.validate()?;
        let q = self.input_dim;
        if points.len() % q != 0 {
            return Err(PlmError::Argument(format!(
                "point buffer of length {} is not a multiple of input_dim {q}",
                points.len()
            )));
        }
        for p in points.chunks(q) {
            self.check_point(p)?;
        }
        Ok(points.len() / q)
    }
}

pub fn eval_kernel(spec: &KernelSpec, s: &[f64], t: &[f64]) -> Result<f64> {
    spec.eval(s, t)
}

/// Gram matrix of `points`, stored row-major with `spec.input_dim` coordinates per point.
pub fn gram_matrix(spec: &KernelSpec, points: &[f64]) -> Result<Mat<f64>> {
    let n = spec.check_points(points)?;
    if n == 0 {
        return Err(PlmError::Argument("gram_matrix needs at least one point".into()));
    }
    let q = spec.input_dim;
    let mut k = Mat::zeros(n, n);
    for i in 0..n {
        let pi = &points[i * q..(i + 1) * q];
        for j in 0..=i {
            let v = spec.eval_unchecked(pi, &points[j * q..(j + 1) * q]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// `K[i, j] = k(a_i, b_j)`.
pub fn cross_gram(spec: &KernelSpec, a: &[f64], b: &[f64]) -> Result<Mat<f64>> {
    let na = spec.check_points(a)?;
    let nb = spec.check_points(b)?;
    let q = spec.input_dim;
    Ok(Mat::from_fn(na, nb, |i, j| {
        spec.eval_unchecked(&a[i * q..(i + 1) * q], &b[j * q..(j + 1) * q])
    }))
}

/// The smoother `A = K (n lambda2 I + K)^{-1}` and its residual operator `M = I - A`.
#[derive(Debug, Clone)]
pub struct SmootherPair {
    pub a: Mat<f64>,
    pub m: Mat<f64>,
    pub n: usize,
    pub lambda2: f64,
}

pub fn smoother_pair(gram: MatRef<'_, f64>, lambda2: f64) -> Result<SmootherPair> {
    let n = gram.nrows();
    if n == 0 || gram.ncols() != n {
        return Err(PlmError::Argument("gram must be a non-empty square matrix".into()));
    }
    if !(lambda2.is_finite() && lambda2 > 0.0) {
        return Err(PlmError::Argument(format!("lambda2 must be positive, got {lambda2}")));
    }
    // Through the eigenbasis of K with roundoff-negative eigenvalues clamped,
    // so A stays in [0, 1) and neither operator is formed as I minus the other.
    let eig = KernelEigen::new(gram)?;
    let shift = n as f64 * lambda2;
    let u = &eig.vectors;
    let build = |w: &dyn Fn(f64) -> f64| {
        let scaled = Mat::from_fn(n, n, |i, k| u[(i, k)] * w(eig.values[k]));
        let mut out = &scaled * u.transpose();
        linalg::symmetrize(&mut out);
        out
    };
    let a = build(&|d| d / (shift + d));
    let m = build(&|d| shift / (shift + d));
    Ok(SmootherPair { a, m, n, lambda2 })
}

impl SmootherPair {
    /// Symmetric square root of `M`, negative roundoff eigenvalues clamped to zero.
    pub fn sqrt_m(&self) -> Result<Mat<f64>> {
        let evd = linalg::sym_eigen(self.m.as_ref())?;
        let n = self.n;
        let roots: Vec<f64> = evd.values.iter().map(|&v| v.max(0.0).sqrt()).collect();
        let u = &evd.vectors;
        let scaled = Mat::from_fn(n, n, |i, k| u[(i, k)] * roots[k]);
        let mut out = &scaled * u.transpose();
        linalg::symmetrize(&mut out);
        Ok(out)
    }
}

/// Eigendecomposition of a Gram matrix, shared by every `lambda2` on the same points.
///
/// With `K = U diag(d) U'`, the residual operator is
/// `M = U diag(n lambda2 / (n lambda2 + d)) U'`.
#[derive(Debug, Clone)]
pub struct KernelEigen {
    pub values: Vec<f64>,
    pub vectors: Mat<f64>,
}

impl KernelEigen {
    pub fn new(gram: MatRef<'_, f64>) -> Result<Self> {
        let evd = linalg::sym_eigen(gram)?;
        Ok(KernelEigen {
            values: evd.values.into_iter().map(|v| v.max(0.0)).collect(),
            vectors: evd.vectors,
        })
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    /// Eigenvalues of `M`, aligned with `vectors`.
    pub fn residual_weights(&self, lambda2: f64) -> Vec<f64> {
        let shift = self.n() as f64 * lambda2;
        self.values.iter().map(|&d| shift / (shift + d)).collect()
    }

    /// Eigenvalues of `(n lambda2 I + K)^{-1}`.
    pub fn inverse_weights(&self, lambda2: f64) -> Vec<f64> {
        let shift = self.n() as f64 * lambda2;
        self.values.iter().map(|&d| 1.0 / (shift + d)).collect()
    }

    /// `U' x`
    pub fn project(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        self.vectors.transpose() * x
    }

    pub fn project_vec(&self, v: &[f64]) -> Vec<f64> {
        linalg::mat_t_vec(self.vectors.as_ref(), v)
    }

    /// `U diag(w) z` for `z` already in the eigenbasis.
    pub fn unproject_weighted(&self, w: &[f64], z: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = w.iter().zip(z).map(|(a, b)| a * b).collect();
        linalg::mat_vec(self.vectors.as_ref(), &scaled)
    }
}

/// Kernel eigenvalues `mu_1 >= mu_2 >= ... >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub enum EigenSequence {
    Explicit(Vec<f64>),
    /// `mu_l = l^(-2 alpha)`, `alpha > 1/2`.
    PowerLaw { alpha: f64 },
}

impl EigenSequence {
    pub fn explicit(mu: Vec<f64>) -> Result<Self> {
        if mu.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(PlmError::Argument("eigenvalues must be finite and nonnegative".into()));
        }
        if mu.windows(2).any(|w| w[1] > w[0]) {
            return Err(PlmError::Argument("eigenvalues must be nonincreasing".into()));
        }
        Ok(EigenSequence::Explicit(mu))
    }

    pub fn power_law(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.5) {
            return Err(PlmError::Argument(format!(
                "power-law decay needs alpha > 1/2 for a summable sequence, got {alpha}"
            )));
        }
        Ok(EigenSequence::PowerLaw { alpha })
    }

    /// Empirical eigenvalues of the normalized Gram matrix `K / n`.
    pub fn from_gram(gram: MatRef<'_, f64>) -> Result<Self> {
        let n = gram.nrows() as f64;
        let mut mu: Vec<f64> = linalg::sym_eigenvalues(gram)?
            .into_iter()
            .map(|v| (v / n).max(0.0))
            .collect();
        mu.sort_by(|a, b| b.total_cmp(a));
        Ok(EigenSequence::Explicit(mu))
    }

    fn is_trivial(&self) -> bool {
        match self {
            EigenSequence::Explicit(mu) => mu.iter().all(|&v| v == 0.0),
            EigenSequence::PowerLaw { .. } => false,
        }
    }

    /// `sum_l min(r^2, mu_l)`.
    pub fn truncated_sum(&self, r: f64) -> f64 {
        let r2 = r * r;
        match self {
            EigenSequence::Explicit(mu) => mu.iter().map(|&m| m.min(r2)).sum(),
            EigenSequence::PowerLaw { alpha } => power_law_truncated_sum(*alpha, r2),
        }
    }
}

/// Explicit terms summed before switching to the Euler-Maclaurin tail.
const MAX_EXPLICIT_TERMS: u64 = 1_000_000;

fn power_law_truncated_sum(alpha: f64, r2: f64) -> f64 {
    let expo = 2.0 * alpha;
    let mu = |l: f64| l.powf(-expo);
    // First index whose eigenvalue no longer exceeds r^2.
    let mut first = r2.powf(-0.5 / alpha).ceil().max(1.0);
    while first > 1.0 && mu(first - 1.0) <= r2 {
        first -= 1.0;
    }
    while mu(first) > r2 {
        first += 1.0;
    }
    let mut sum = (first - 1.0) * r2;
    let cutoff = r2 * 1e-6;
    let mut l = first;
    let mut terms = 0u64;
    while mu(l) >= cutoff && terms < MAX_EXPLICIT_TERMS {
        sum += mu(l);
        l += 1.0;
        terms += 1;
    }
    // sum_{k >= l} k^-e ~ l^(1-e)/(e-1) + l^-e/2 + e l^(-e-1)/12
    sum + l.powf(1.0 - expo) / (expo - 1.0) + 0.5 * mu(l) + expo * l.powf(-expo - 1.0) / 12.0
}

/// `Q_n(r) = n^{-1/2} [sum_l min(r^2, mu_l)]^{1/2}`.
pub fn q_n(eigs: &EigenSequence, n: usize, r: f64) -> Result<f64> {
    if !(r.is_finite() && r > 0.0) {
        return Err(PlmError::Argument(format!("q_n radius must be positive, got {r}")));
    }
    if n == 0 {
        return Err(PlmError::Argument("q_n needs n >= 1".into()));
    }
    Ok((eigs.truncated_sum(r) / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadiusFlag {
    /// Every eigenvalue is zero, so the inequality holds for every `r > 0`.
    Degenerate,
    /// `40 r^2 < Q_n(r)` on all of `(0, 1]`.
    NoCrossing,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalRadius {
    pub nu: f64,
    pub flag: Option<RadiusFlag>,
}

pub const RADIUS_TOLERANCE: f64 = 1e-10;

/// Smallest `nu` in `(0, 1]` with `40 nu^2 >= Q_n(nu)`, by bisection.
pub fn critical_radius(eigs: &EigenSequence, n: usize) -> Result<CriticalRadius> {
    if n == 0 {
        return Err(PlmError::Argument("critical_radius needs n >= 1".into()));
    }
    if eigs.is_trivial() {
        return Ok(CriticalRadius {
            nu: 0.0,
            flag: Some(RadiusFlag::Degenerate),
        });
    }
    let holds = |r: f64| -> Result<bool> { Ok(40.0 * r * r >= q_n(eigs, n, r)?) };
    if !holds(1.0)? {
        return Ok(CriticalRadius {
            nu: 1.0,
            flag: Some(RadiusFlag::NoCrossing),
        });
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while hi - lo > RADIUS_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if holds(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(CriticalRadius { nu: hi, flag: None })
}

/// `gamma_n = max(nu_n, sqrt(log p / n))`.
pub fn gamma_n(nu: f64, n: usize, p: usize) -> Result<f64> {
    if p < 2 || n == 0 {
        return Err(PlmError::Argument(format!("gamma_n needs p >= 2 and n >= 1 (p={p}, n={n})")));
    }
    Ok(nu.max(((p as f64).ln() / n as f64).sqrt()))
}

/// Rate exponents of `nu_n` for `mu_l = l^(-2 alpha)`: `(derived, stated)`.
///
/// `derived` follows from solving `40 r^2 = Q_n(r)` directly; `stated` is the
/// faster `-2 alpha / (2 alpha + 1)` rate, which matches `nu_n^2` instead.
pub fn radius_exponents(alpha: f64) -> (f64, f64) {
    let d = 2.0 * alpha + 1.0;
    (-alpha / d, -2.0 * alpha / d)
}

//! Seeded synthetic partially linear data and random sharding.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use faer::Mat;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{PlmError, Result};

/// Leading nonzero coefficients of the default `beta*`.
pub const DEFAULT_SIGNAL: [f64; 5] = [1.0, 2.0, -1.0, 0.5, -2.0];

/// `f*(t) = 5 sin(2 pi t) / (2 - sin(2 pi t))`.
pub fn f_star(t: f64) -> f64 {
    let s = (2.0 * std::f64::consts::PI * t).sin();
    5.0 * s / (2.0 - s)
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    let tail = 0.5 * libm::erfc(z.abs() / std::f64::consts::SQRT_2);
    if z >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Lower and upper clamp for `T = Phi(Z)` so that `T` stays inside `(0, 1)`.
pub const T_CLAMP: f64 = 1e-15;

/// Counter-based stream keyed by logical indices, independent of scheduling.
pub fn stream_rng(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    let mut stream = 0x243F_6A88_85A3_08D3_u64;
    for &k in keys {
        stream = splitmix64(stream ^ k);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A `u64` seed drawn from the stream keyed by `keys`.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    stream_rng(seed, keys).next_u64()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub total_n: usize,
    pub p: usize,
    pub m: usize,
    pub rho: f64,
    pub noise_var: f64,
    pub beta_star: Vec<f64>,
    pub seed: u64,
}

impl SimDesign {
    /// Default design: `rho = 0.3`, `sigma^2 = 4`, `beta* = (1, 2, -1, 0.5, -2, 0, ...)`.
    pub fn new(total_n: usize, p: usize, m: usize, seed: u64) -> Self {
        let mut beta_star = vec![0.0; p];
        for (b, s) in beta_star.iter_mut().zip(DEFAULT_SIGNAL) {
            *b = s;
        }
        SimDesign {
            total_n,
            p,
            m,
            rho: 0.3,
            noise_var: 4.0,
            beta_star,
            seed,
        }
    }

    pub fn local_n(&self) -> usize {
        self.total_n / self.m
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PlmError::Argument(msg));
        if self.m == 0 || self.total_n < self.m {
            return bad(format!("need N >= m >= 1 (N={}, m={})", self.total_n, self.m));
        }
        if self.total_n % self.m != 0 {
            return bad(format!("N={} is not divisible by m={}", self.total_n, self.m));
        }
        if self.p < DEFAULT_SIGNAL.len() {
            return bad(format!("p={} must be at least {}", self.p, DEFAULT_SIGNAL.len()));
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return bad(format!("rho={} must lie in (-1, 1)", self.rho));
        }
        if !(self.noise_var.is_finite() && self.noise_var > 0.0) {
            return bad(format!("noise_var={} must be positive", self.noise_var));
        }
        if self.beta_star.len() != self.p {
            return bad(format!(
                "beta_star has length {} but p={}",
                self.beta_star.len(),
                self.p
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: Vec<f64>,
    /// `N x p`
    pub x: Mat<f64>,
    pub t: Vec<f64>,
    pub f_true: Vec<f64>,
    /// Realized noise: `y - (x'beta* + f*(t))` holds exactly.
    pub eps: Vec<f64>,
    pub design: SimDesign,
}

/// `x_i' beta`, accumulated left to right.
pub fn linear_part(x: &Mat<f64>, i: usize, beta: &[f64]) -> f64 {
    let mut s = 0.0;
    for (j, &b) in beta.iter().enumerate() {
        s += x[(i, j)] * b;
    }
    s
}

pub fn sample_dataset(design: &SimDesign) -> Result<Dataset> {
    sample_dataset_with(design, &mut stream_rng(design.seed, &[0]))
}

/// Draws `Z in R^(p+1)` by the AR(1) recursion, `T = Phi(Z_1)`, `X = Z_2..Z_(p+1)`.
pub fn sample_dataset_with(design: &SimDesign, rng: &mut impl Rng) -> Result<Dataset> {
    design.validate()?;
    let (n, p) = (design.total_n, design.p);
    let rho = design.rho;
    let innov = (1.0 - rho * rho).sqrt();
    let sigma = design.noise_var.sqrt();

    let mut x = Mat::zeros(n, p);
    let mut t = Vec::with_capacity(n);
    let mut f_true = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut eps = Vec::with_capacity(n);
    for i in 0..n {
        let z1: f64 = rng.sample(StandardNormal);
        let mut prev = z1;
        for j in 0..p {
            let eta: f64 = rng.sample(StandardNormal);
            prev = rho * prev + innov * eta;
            x[(i, j)] = prev;
        }
        let ti = normal_cdf(z1).clamp(T_CLAMP, 1.0 - T_CLAMP);
        let fi = f_star(ti);
        let e = sigma * rng.sample::<f64, _>(StandardNormal);
        let signal = linear_part(&x, i, &design.beta_star) + fi;
        let yi = signal + e;
        t.push(ti);
        f_true.push(fi);
        y.push(yi);
        eps.push(yi - signal);
    }
    Ok(Dataset {
        y,
        x,
        t,
        f_true,
        eps,
        design: design.clone(),
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// The whole sample as one shard, rows in original order.
    pub fn as_shard(&self) -> Shard {
        Shard::from_rows(self, (0..self.len()).collect(), 0)
    }

    /// Writes `i,y,t,x1..xp,eps` with 17 significant digits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("i,y,t");
        for j in 1..=self.p() {
            let _ = write!(out, ",x{j}");
        }
        out.push_str(",eps\n");
        for i in 0..self.len() {
            let _ = write!(out, "{i},{},{}", fmt_real(self.y[i]), fmt_real(self.t[i]));
            for j in 0..self.p() {
                let _ = write!(out, ",{}", fmt_real(self.x[(i, j)]));
            }
            let _ = writeln!(out, ",{}", fmt_real(self.eps[i]));
        }
        let mut f = std::fs::File::create(path).map_err(|e| PlmError::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| PlmError::io(path, e))
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_real(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

/// One machine's rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub machine_id: usize,
    pub indices: Vec<usize>,
    pub y: Vec<f64>,
    pub x: Mat<f64>,
    pub t: Vec<f64>,
}

impl Shard {
    pub fn from_rows(data: &Dataset, indices: Vec<usize>, machine_id: usize) -> Shard {
        let y = indices.iter().map(|&i| data.y[i]).collect();
        let t = indices.iter().map(|&i| data.t[i]).collect();
        let x = Mat::from_fn(indices.len(), data.p(), |r, j| data.x[(indices[r], j)]);
        Shard {
            machine_id,
            indices,
            y,
            x,
            t,
        }
    }

    /// Builds a shard directly from arrays (no parent dataset).
    pub fn from_parts(y: Vec<f64>, x: Mat<f64>, t: Vec<f64>) -> Result<Shard> {
        if x.nrows() != y.len() || t.len() != y.len() {
            return Err(PlmError::Argument(format!(
                "row counts disagree: y={}, x={}, t={}",
                y.len(),
                x.nrows(),
                t.len()
            )));
        }
        Ok(Shard {
            machine_id: 0,
            indices: (0..y.len()).collect(),
            y,
            x,
            t,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Rows `rows` of this shard, as a new shard.
    pub fn subset(&self, rows: &[usize]) -> Shard {
        Shard {
            machine_id: self.machine_id,
            indices: rows.iter().map(|&r| self.indices[r]).collect(),
            y: rows.iter().map(|&r| self.y[r]).collect(),
            x: Mat::from_fn(rows.len(), self.p(), |i, j| self.x[(rows[i], j)]),
            t: rows.iter().map(|&r| self.t[r]).collect(),
        }
    }
}

/// Uniformly random permutation of the rows cut into `m` consecutive blocks.
pub fn partition(data: &Dataset, m: usize, seed: u64) -> Result<Vec<Shard>> {
    partition_with(data, m, &mut stream_rng(seed, &[1]))
}

pub fn partition_with(data: &Dataset, m: usize, rng: &mut impl Rng) -> Result<Vec<Shard>> {
    let total = data.len();
    if m == 0 || total % m != 0 {
        return Err(PlmError::Argument(format!(
            "cannot split N={total} rows evenly across m={m} machines"
        )));
    }
    let mut perm: Vec<usize> = (0..total).collect();
    perm.shuffle(rng);
    let n = total / m;
    Ok(perm
        .chunks(n)
        .enumerate()
        .map(|(l, rows)| Shard::from_rows(data, rows.to_vec(), l))
        .collect())
}

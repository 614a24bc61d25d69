//! Estimation error norms and the small amount of statistics the experiments need.

use crate::error::{PlmError, Result};

fn check_lengths(beta: &[f64], beta_star: &[f64]) -> Result<()> {
    if beta.len() != beta_star.len() {
        return Err(PlmError::Argument(format!(
            "length mismatch: {} vs {}",
            beta.len(),
            beta_star.len()
        )));
    }
    Ok(())
}

/// `max_j |beta_j - beta*_j|`.
pub fn linf_error(beta: &[f64], beta_star: &[f64]) -> Result<f64> {
    check_lengths(beta, beta_star)?;
    Ok(beta
        .iter()
        .zip(beta_star)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

pub fn l1_error(beta: &[f64], beta_star: &[f64]) -> Result<f64> {
    check_lengths(beta, beta_star)?;
    Ok(beta.iter().zip(beta_star).map(|(a, b)| (a - b).abs()).sum())
}

pub fn l2_error(beta: &[f64], beta_star: &[f64]) -> Result<f64> {
    check_lengths(beta, beta_star)?;
    Ok(beta
        .iter()
        .zip(beta_star)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMetrics {
    pub linf: f64,
    pub l1: f64,
    pub l2: f64,
}

impl ErrorMetrics {
    pub fn between(beta: &[f64], beta_star: &[f64]) -> Result<Self> {
        Ok(ErrorMetrics {
            linf: linf_error(beta, beta_star)?,
            l1: l1_error(beta, beta_star)?,
            l2: l2_error(beta, beta_star)?,
        })
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean, zero for a single observation.
pub fn std_error(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mu = mean(xs);
    let var = xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (x, y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        da += (x - ma) * (x - ma);
        db += (y - mb) * (y - mb);
    }
    if da == 0.0 || db == 0.0 {
        return 0.0;
    }
    num / (da * db).sqrt()
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

/// One-sided sign test p-value for "first < second" over paired samples; ties dropped.
pub fn sign_test_less(first: &[f64], second: &[f64]) -> f64 {
    let mut wins = 0u64;
    let mut trials = 0u64;
    for (a, b) in first.iter().zip(second) {
        if a < b {
            wins += 1;
            trials += 1;
        } else if a > b {
            trials += 1;
        }
    }
    binomial_upper_tail(trials, wins)
}

/// `P(X >= k)` for `X ~ Binomial(n, 1/2)`.
pub fn binomial_upper_tail(n: u64, k: u64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let ln_half_n = n as f64 * 0.5f64.ln();
    let mut total = 0.0;
    for i in k..=n {
        total += (ln_choose(n, i) + ln_half_n).exp();
    }
    total.min(1.0)
}

fn ln_choose(n: u64, k: u64) -> f64 {
    let lg = |v: u64| libm::lgamma(v as f64 + 1.0);
    lg(n) - lg(k) - lg(n - k)
}

/// Least-squares slope of `ys` on `xs`.
pub fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let num: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linf_examples() {
        let b = [1.0, 2.0, -1.0];
        assert_eq!(linf_error(&b, &b).unwrap(), 0.0);
        assert_eq!(linf_error(&[2.0, 2.0, -1.0], &b).unwrap(), 1.0);
        assert!(linf_error(&[1.0], &b).is_err());
    }

    #[test]
    fn summaries() {
        assert_eq!(std_error(&[3.0]), 0.0);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(ranks(&[10.0, 20.0, 10.0]), vec![1.5, 3.0, 1.5]);
        assert!((spearman(&[1.0, 2.0, 3.0], &[5.0, 6.0, 9.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[9.0, 6.0, 5.0]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn binomial_tail_small_cases() {
        assert!((binomial_upper_tail(3, 3) - 0.125).abs() < 1e-12);
        assert!((binomial_upper_tail(4, 2) - 11.0 / 16.0).abs() < 1e-12);
        assert_eq!(binomial_upper_tail(5, 0), 1.0);
    }
}

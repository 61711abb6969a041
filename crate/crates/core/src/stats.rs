//! Small descriptive-statistics helpers shared across modules.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
pub enum StatsError {
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("zero variance")]
    ZeroVariance,
    #[error("non-finite value")]
    NonFinite,
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance with the `n - 1` denominator; exactly zero for a constant
/// sample (the mean of repeated values need not round back to the value).
pub fn sample_variance(x: &[f64]) -> f64 {
    if x.len() > 1 && x.iter().all(|&v| v == x[0]) {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

pub fn sample_sd(x: &[f64]) -> f64 {
    sample_variance(x).sqrt()
}

fn check_pair(x: &[f64], y: &[f64], min: usize) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < min {
        return Err(StatsError::TooFew { needed: min, got: x.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

/// Product-moment correlation; undefined when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y, 2)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rho as the Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y, 2)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Two-sided Fisher-z interval for a Pearson correlation from `n` pairs.
pub fn fisher_ci(r: f64, n: usize, level: f64) -> Result<(f64, f64), StatsError> {
    if n < 4 {
        return Err(StatsError::TooFew { needed: 4, got: n });
    }
    let z = r.clamp(-1.0 + 1e-15, 1.0 - 1e-15).atanh();
    let crit = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    let se = 1.0 / (n as f64 - 3.0).sqrt();
    Ok(((z - crit * se).tanh(), (z + crit * se).tanh()))
}

/// Linear-interpolation quantile (Hyndman & Fan type 7) of unsorted data.
pub fn quantile(x: &[f64], p: f64) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let h = (s.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

/// Mean squares of a complete two-way layout (rows x columns, one observation per cell).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoWayAnova {
    pub rows: usize,
    pub cols: usize,
    pub ms_rows: f64,
    pub ms_cols: f64,
    pub ms_error: f64,
}

impl TwoWayAnova {
    pub fn new(data: &[Vec<f64>]) -> Result<Self, StatsError> {
        let n = data.len();
        let k = data.first().map_or(0, Vec::len);
        if n < 2 {
            return Err(StatsError::TooFew { needed: 2, got: n });
        }
        if k < 2 {
            return Err(StatsError::TooFew { needed: 2, got: k });
        }
        if let Some(r) = data.iter().find(|r| r.len() != k) {
            return Err(StatsError::LengthMismatch(r.len(), k));
        }
        // Raw sums around an integer shift: exact for integer ratings, so the mean
        // squares do not depend on the order of rows or columns.
        let shift = (data.iter().flatten().sum::<f64>() / (n * k) as f64).round();
        let total: f64 = data.iter().flatten().map(|v| v - shift).sum();
        let sq: f64 = data.iter().flatten().map(|v| (v - shift).powi(2)).sum();
        let row_sq: f64 = data.iter().map(|r| r.iter().map(|v| v - shift).sum::<f64>().powi(2)).sum();
        let col_sq: f64 = (0..k).map(|c| data.iter().map(|r| r[c] - shift).sum::<f64>().powi(2)).sum();
        let corr = total * total / (n * k) as f64;
        let ss_rows = (row_sq / k as f64 - corr).max(0.0);
        let ss_cols = (col_sq / n as f64 - corr).max(0.0);
        let mut ss_err = (sq - corr - ss_rows - ss_cols).max(0.0);
        let mut ss_cols = ss_cols;
        // identical columns: no column or residual variation, without rounding residue
        if data.iter().all(|r| r.iter().all(|&v| v == r[0])) {
            ss_err = 0.0;
            ss_cols = 0.0;
        }
        let (nf, kf) = (n as f64, k as f64);
        Ok(TwoWayAnova {
            rows: n,
            cols: k,
            ms_rows: ss_rows / (nf - 1.0),
            ms_cols: ss_cols / (kf - 1.0),
            ms_error: ss_err / ((nf - 1.0) * (kf - 1.0)),
        })
    }

    /// McGraw & Wong ICC(A,1): two-way random effects, absolute agreement, single rating.
    pub fn icc_a1(&self) -> Result<f64, StatsError> {
        let (n, k) = (self.rows as f64, self.cols as f64);
        let den = self.ms_rows + (k - 1.0) * self.ms_error + k * (self.ms_cols - self.ms_error) / n;
        self.ratio(den)
    }

    /// McGraw & Wong ICC(A,k): absolute agreement of the mean of `k` ratings.
    pub fn icc_ak(&self) -> Result<f64, StatsError> {
        let n = self.rows as f64;
        let den = self.ms_rows + (self.ms_cols - self.ms_error) / n;
        self.ratio(den)
    }

    fn ratio(&self, den: f64) -> Result<f64, StatsError> {
        if self.ms_rows == 0.0 || den == 0.0 || !den.is_finite() {
            return Err(StatsError::ZeroVariance);
        }
        Ok((self.ms_rows - self.ms_error) / den)
    }
}

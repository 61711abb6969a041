//! Convergence diagnostics: split-R̂ (classic and rank-normalised) and bulk
//! effective sample size with Geyer's initial monotone sequence.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::stats::average_ranks;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
pub enum DiagnosticsError {
    #[error("R-hat needs at least two chains, got {0}")]
    SingleChain(usize),
    #[error("chains need at least 4 draws each, got {0}")]
    TooShort(usize),
    #[error("chains have unequal lengths")]
    Ragged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    /// max(bulk, tail) rank-normalised split-R̂; NaN when the draws are constant.
    pub rhat: f64,
    pub ess_bulk: f64,
}

fn check(chains: &[Vec<f64>]) -> Result<usize, DiagnosticsError> {
    if chains.len() < 2 {
        return Err(DiagnosticsError::SingleChain(chains.len()));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(DiagnosticsError::Ragged);
    }
    if n < 4 {
        return Err(DiagnosticsError::TooShort(n));
    }
    Ok(n)
}

/// Splits each chain into halves (dropping the middle draw of odd lengths).
fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = chains[0].len();
    let h = n / 2;
    chains.iter().flat_map(|c| [c[..h].to_vec(), c[n - h..].to_vec()]).collect()
}

/// Gelman–Rubin potential scale reduction of equal-length chains (no splitting).
fn basic_rhat(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| crate::stats::mean(c)).collect();
    let w = chains.iter().map(|c| crate::stats::sample_variance(c)).sum::<f64>() / chains.len() as f64;
    let b_over_n = crate::stats::sample_variance(&means);
    let var_plus = (n - 1.0) / n * w + b_over_n;
    (var_plus / w).sqrt()
}

/// Classic split-R̂ on the raw draws.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64, DiagnosticsError> {
    check(chains)?;
    Ok(basic_rhat(&split(chains)))
}

/// Replaces pooled draws by normal scores of their average ranks.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = chains[0].len();
    let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let s = pooled.len() as f64;
    let normal = Normal::standard();
    let z: Vec<f64> =
        average_ranks(&pooled).into_iter().map(|r| normal.inverse_cdf((r - 0.375) / (s + 0.25))).collect();
    z.chunks(n).map(<[f64]>::to_vec).collect()
}

/// Rank-normalised split-R̂: the larger of the bulk and the folded (tail) value.
pub fn rhat(chains: &[Vec<f64>]) -> Result<f64, DiagnosticsError> {
    check(chains)?;
    let halves = split(chains);
    let bulk = basic_rhat(&rank_normalize(&halves));
    let pooled: Vec<f64> = halves.iter().flatten().copied().collect();
    let med = crate::stats::quantile(&pooled, 0.5);
    let folded: Vec<Vec<f64>> = halves.iter().map(|c| c.iter().map(|v| (v - med).abs()).collect()).collect();
    let tail = basic_rhat(&rank_normalize(&folded));
    Ok(if bulk.is_nan() || tail.is_nan() { f64::NAN } else { bulk.max(tail) })
}

/// Effective sample size of equal-length chains with Geyer's initial monotone
/// sequence estimator (including the antithetic-case improvement).
fn ess(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    let means: Vec<f64> = chains.iter().map(|c| crate::stats::mean(c)).collect();
    let acov = |lag: usize| -> f64 {
        chains
            .iter()
            .zip(&means)
            .map(|(c, mu)| (0..n - lag).map(|i| (c[i] - mu) * (c[i + lag] - mu)).sum::<f64>() / n as f64)
            .sum::<f64>()
            / m as f64
    };
    let nf = n as f64;
    let mean_var = acov(0) * nf / (nf - 1.0);
    let var_plus = mean_var * (nf - 1.0) / nf + if m > 1 { crate::stats::sample_variance(&means) } else { 0.0 };
    if !(var_plus > 0.0) {
        return f64::NAN;
    }
    let mut rho = vec![0.0; n + 2];
    rho[0] = 1.0;
    let mut even = 1.0;
    let mut odd = 1.0 - (mean_var - acov(1)) / var_plus;
    rho[1] = odd;
    let mut t = 1;
    while t + 5 < n && even + odd > 0.0 {
        even = 1.0 - (mean_var - acov(t + 1)) / var_plus;
        odd = 1.0 - (mean_var - acov(t + 2)) / var_plus;
        if even + odd >= 0.0 {
            rho[t + 1] = even;
            rho[t + 2] = odd;
        }
        t += 2;
    }
    let max_t = t;
    if even > 0.0 {
        rho[max_t + 1] = even;
    }
    let mut t = 1;
    while t + 3 <= max_t {
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t] {
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0;
            rho[t + 2] = rho[t + 1];
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let tau = (-1.0 + 2.0 * rho[..max_t].iter().sum::<f64>() + rho[max_t + 1]).max(1.0 / total.log10());
    (total / tau).min(total * total.log10())
}

/// Bulk ESS: ESS of the rank-normalised split chains.
pub fn ess_bulk(chains: &[Vec<f64>]) -> Result<f64, DiagnosticsError> {
    check(chains)?;
    Ok(ess(&rank_normalize(&split(chains))))
}

pub fn diagnose(chains: &[Vec<f64>]) -> Result<ParamDiagnostics, DiagnosticsError> {
    Ok(ParamDiagnostics { rhat: rhat(chains)?, ess_bulk: ess_bulk(chains)? })
}

//! Seven-category ordered-logistic kernel shared by the simulator and the IRT
//! likelihoods: `P(Y ≥ k) = σ(η − κ_{k−1})` with `κ_0 = −∞`, `κ_7 = +∞`.

use serde::Serialize;
use thiserror::Error;

pub const CATEGORIES: usize = 7;
pub const THRESHOLDS: usize = CATEGORIES - 1;

pub type Thresholds = [f64; THRESHOLDS];

#[derive(Debug, Clone, PartialEq, Error, Serialize)]
pub enum OrdinalError {
    #[error("thresholds must be finite and strictly increasing: {0:?}")]
    Unordered(Vec<f64>),
    #[error("category {0} outside 1..7")]
    BadCategory(u8),
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)` without overflow or underflow to `-inf` for moderate `x`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn check_thresholds(kappa: &Thresholds) -> Result<(), OrdinalError> {
    let ok = kappa.iter().all(|k| k.is_finite()) && kappa.windows(2).all(|w| w[0] < w[1]);
    if ok {
        Ok(())
    } else {
        Err(OrdinalError::Unordered(kappa.to_vec()))
    }
}

/// `P(Y ≥ k)` in survivor form, `k` in 1..=8 (1 → 1, 8 → 0).
pub fn survivor(eta: f64, kappa: &Thresholds, k: usize) -> f64 {
    match k {
        0 | 1 => 1.0,
        8.. => 0.0,
        _ => sigmoid(eta - kappa[k - 2]),
    }
}

/// `P(Y ≥ k)` via the cumulative-cutpoint convention `1 − P(Y ≤ k−1)`,
/// with `P(Y ≤ c) = σ(κ_c − η)`.
pub fn survivor_from_cutpoints(eta: f64, kappa: &Thresholds, k: usize) -> f64 {
    match k {
        0 | 1 => 1.0,
        8.. => 0.0,
        _ => 1.0 - sigmoid(kappa[k - 2] - eta),
    }
}

/// Category probabilities `P(Y = k)`, k = 1..7.
pub fn category_probs(eta: f64, kappa: &Thresholds) -> Result<[f64; CATEGORIES], OrdinalError> {
    check_thresholds(kappa)?;
    let mut p = [0.0; CATEGORIES];
    for (k, pk) in p.iter_mut().enumerate() {
        *pk = log_prob(eta, kappa, k as u8 + 1).exp();
    }
    Ok(p)
}

/// Inverse-CDF draw of a category from a uniform `u` in [0, 1).
pub fn draw_category(eta: f64, kappa: &Thresholds, u: f64) -> u8 {
    // Y ≥ k  ⇔  u < P(Y ≥ k); survivors are decreasing in k
    let mut y = 1;
    for k in 2..=CATEGORIES {
        if u < survivor(eta, kappa, k) {
            y = k as u8;
        } else {
            break;
        }
    }
    y
}

/// `ln P(Y = y)` evaluated in a form that stays accurate in the tails.
/// Thresholds are assumed ordered.
pub fn log_prob(eta: f64, kappa: &Thresholds, y: u8) -> f64 {
    match y {
        1 => log_sigmoid(kappa[0] - eta),
        7 => log_sigmoid(eta - kappa[5]),
        _ => {
            let (lo, hi) = (kappa[y as usize - 2], kappa[y as usize - 1]);
            log_sigmoid(eta - lo) + log_sigmoid(hi - eta) + (-(-(hi - lo)).exp_m1()).ln()
        }
    }
}

/// One observation's log-probability and its partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub log_p: f64,
    pub d_eta: f64,
    /// `(threshold index, ∂ log p / ∂κ)` for the lower and upper bounding thresholds.
    pub d_lo: Option<(usize, f64)>,
    pub d_hi: Option<(usize, f64)>,
}

pub fn term(eta: f64, kappa: &Thresholds, y: u8) -> Term {
    let gap = match y {
        2..=6 => kappa[y as usize - 1] - kappa[y as usize - 2],
        _ => 0.0,
    };
    term_with_gap(eta, kappa, gap, y)
}

/// [`term`] with the width `κ_{y−1} − κ_{y−2}` of a middle category supplied
/// exactly (e.g. `exp` of a log-gap), so a gap lost to rounding in κ still
/// yields a finite log-probability. `gap` is ignored for `y ∈ {1, 7}`.
pub fn term_with_gap(eta: f64, kappa: &Thresholds, gap: f64, y: u8) -> Term {
    match y {
        1 => {
            let s = sigmoid(eta - kappa[0]);
            Term { log_p: log_sigmoid(kappa[0] - eta), d_eta: -s, d_lo: None, d_hi: Some((0, s)) }
        }
        7 => {
            let s = sigmoid(kappa[5] - eta);
            Term { log_p: log_sigmoid(eta - kappa[5]), d_eta: s, d_lo: Some((5, -s)), d_hi: None }
        }
        _ => {
            let (il, ih) = (y as usize - 2, y as usize - 1);
            let (a, b) = (eta - kappa[il], eta - kappa[ih]);
            let d = gap;
            let (sa, sb) = (sigmoid(a), sigmoid(b));
            let inv = 1.0 / d.exp_m1();
            Term {
                log_p: log_sigmoid(a) + log_sigmoid(-b) + (-(-d).exp_m1()).ln(),
                d_eta: 1.0 - sa - sb,
                d_lo: Some((il, -(1.0 - sa) - inv)),
                d_hi: Some((ih, sb + inv)),
            }
        }
    }
}

/// Unconstrained thresholds: first cutpoint followed by five log-gaps.
pub fn kappa_from_raw(raw: &[f64]) -> Thresholds {
    let mut k = [0.0; THRESHOLDS];
    k[0] = raw[0];
    for j in 1..THRESHOLDS {
        k[j] = k[j - 1] + raw[j].exp();
    }
    k
}

pub fn raw_from_kappa(kappa: &Thresholds) -> [f64; THRESHOLDS] {
    let mut r = [0.0; THRESHOLDS];
    r[0] = kappa[0];
    for j in 1..THRESHOLDS {
        r[j] = (kappa[j] - kappa[j - 1]).ln();
    }
    r
}

/// `ln |∂κ/∂raw|` of [`kappa_from_raw`].
pub fn raw_log_jacobian(raw: &[f64]) -> f64 {
    raw[1..THRESHOLDS].iter().sum()
}

/// Maps `∂f/∂κ` to `∂f/∂raw` (excluding the Jacobian term).
pub fn pullback_kappa_grad(raw: &[f64], d_kappa: &Thresholds) -> Thresholds {
    let mut tail = [0.0; THRESHOLDS];
    let mut acc = 0.0;
    for j in (0..THRESHOLDS).rev() {
        acc += d_kappa[j];
        tail[j] = acc;
    }
    let mut g = [0.0; THRESHOLDS];
    g[0] = tail[0];
    for j in 1..THRESHOLDS {
        g[j] = raw[j].exp() * tail[j];
    }
    g
}

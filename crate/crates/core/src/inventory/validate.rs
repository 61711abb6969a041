use std::collections::HashMap;
use std::fmt;

use serde::Serialize;

use super::{Inventory, InventoryError, ItemPool, Keying, TraitPair};
use crate::assembly::AssemblyConfig;

/// Tolerance for comparing a stored block gap with the pool-derived one.
pub const GAP_RECORD_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintFamily {
    Count,
    Uniqueness,
    CrossDomain,
    Domain,
    DomainPair,
    MixedKey,
    SignBalance,
    GapRecord,
}

impl fmt::Display for ConstraintFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ConstraintFamily::Count => "count",
            ConstraintFamily::Uniqueness => "uniqueness",
            ConstraintFamily::CrossDomain => "cross-domain",
            ConstraintFamily::Domain => "domain",
            ConstraintFamily::DomainPair => "domain-pair",
            ConstraintFamily::MixedKey => "mixed-key",
            ConstraintFamily::SignBalance => "sign-balance",
            ConstraintFamily::GapRecord => "gap-record",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintCheck {
    pub family: ConstraintFamily,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintReport {
    pub checks: Vec<ConstraintCheck>,
    pub block_count: usize,
    /// Items per trait in (A, C, E, N, O) order.
    pub trait_counts: [usize; 5],
    /// Blocks per trait pair in [`TraitPair::all`] order.
    pub pair_counts: [usize; 10],
    pub mixed_key_count: usize,
    /// `[positive, negative]` per trait.
    pub sign_counts: [[usize; 2]; 5],
    pub max_gap: f64,
    pub mean_gap: f64,
    pub sd_gap: f64,
    pub min_gap: f64,
}

impl ConstraintReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, family: ConstraintFamily) -> Option<&ConstraintCheck> {
        self.checks.iter().find(|c| c.family == family)
    }

    pub fn failed(&self) -> impl Iterator<Item = &ConstraintCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// Flat `key<TAB>value` lines, gaps rounded to 2 decimals for display.
    pub fn to_table(&self) -> String {
        let mut s = String::from("key\tvalue\n");
        for c in &self.checks {
            s.push_str(&format!("check.{}\t{}\t{}\n", c.family, if c.passed { "pass" } else { "FAIL" }, c.detail));
        }
        s.push_str(&format!("blocks\t{}\n", self.block_count));
        for t in crate::inventory::TraitDomain::ALL {
            s.push_str(&format!("trait.{t}\t{}\n", self.trait_counts[t.index()]));
            let [p, n] = self.sign_counts[t.index()];
            s.push_str(&format!("sign.{t}\t+{p}/-{n}\n"));
        }
        for p in TraitPair::all() {
            s.push_str(&format!("pair.{p}\t{}\n", self.pair_counts[p.index()]));
        }
        s.push_str(&format!("mixed_key\t{}\n", self.mixed_key_count));
        s.push_str(&format!("gap.max\t{:.2}\ngap.mean\t{:.2}\ngap.sd\t{:.2}\ngap.min\t{:.2}\n",
            self.max_gap, self.mean_gap, self.sd_gap, self.min_gap));
        s
    }
}

/// Checks an inventory against every active constraint family of `cfg`.
/// Gap statistics are recomputed from the pool at full precision.
pub fn validate_inventory(
    inv: &Inventory,
    pool: &ItemPool,
    cfg: &AssemblyConfig,
) -> Result<ConstraintReport, InventoryError> {
    let mut trait_counts = [0usize; 5];
    let mut pair_counts = [0usize; 10];
    let mut sign_counts = [[0usize; 2]; 5];
    let mut mixed = 0usize;
    let mut gaps = Vec::with_capacity(inv.block_count());
    let mut usage: HashMap<&str, usize> = HashMap::new();
    let mut same_domain = Vec::new();
    let mut gap_mismatch = Vec::new();

    for b in inv.blocks() {
        let l = pool.require(&b.left)?;
        let r = pool.require(&b.right)?;
        let sl = pool.desirability(&b.left)?;
        let sr = pool.desirability(&b.right)?;
        let gap = (sl - sr).abs();
        if (gap - b.desirability_gap).abs() > GAP_RECORD_TOLERANCE {
            gap_mismatch.push(b.id.clone());
        }
        gaps.push(gap);
        *usage.entry(b.left.as_str()).or_default() += 1;
        *usage.entry(b.right.as_str()).or_default() += 1;
        for it in [l, r] {
            trait_counts[it.domain.index()] += 1;
            let k = if it.keying == Keying::Positive { 0 } else { 1 };
            sign_counts[it.domain.index()][k] += 1;
        }
        match TraitPair::new(l.domain, r.domain) {
            Some(p) => pair_counts[p.index()] += 1,
            None => same_domain.push(b.id.clone()),
        }
        if l.keying != r.keying {
            mixed += 1;
        }
    }

    let mut checks = Vec::new();
    let mut push = |family, passed, detail: String| checks.push(ConstraintCheck { family, passed, detail });

    push(
        ConstraintFamily::Count,
        inv.block_count() == cfg.blocks,
        format!("{} blocks, expected {}", inv.block_count(), cfg.blocks),
    );
    let mut reused: Vec<&str> = usage.iter().filter(|(_, &n)| n > 1).map(|(&id, _)| id).collect();
    reused.sort_unstable();
    push(
        ConstraintFamily::Uniqueness,
        reused.is_empty(),
        if reused.is_empty() { "every item used at most once".into() } else { format!("reused: {}", reused.join(", ")) },
    );
    push(
        ConstraintFamily::CrossDomain,
        same_domain.is_empty(),
        if same_domain.is_empty() { "all blocks cross-domain".into() } else { format!("same-domain blocks: {}", same_domain.join(", ")) },
    );
    if let Some(target) = cfg.per_trait {
        let bad: Vec<String> = crate::inventory::TraitDomain::ALL
            .iter()
            .filter(|t| trait_counts[t.index()] != target)
            .map(|t| format!("{t}={}", trait_counts[t.index()]))
            .collect();
        push(ConstraintFamily::Domain, bad.is_empty(), format!("target {target} per trait{}", fmt_bad(&bad)));
    }
    if let Some(target) = cfg.per_trait_pair {
        let bad: Vec<String> = TraitPair::all()
            .into_iter()
            .filter(|p| pair_counts[p.index()] != target)
            .map(|p| format!("{p}={}", pair_counts[p.index()]))
            .collect();
        push(ConstraintFamily::DomainPair, bad.is_empty(), format!("target {target} per pair{}", fmt_bad(&bad)));
    }
    if let Some(range) = cfg.mixed_key {
        push(
            ConstraintFamily::MixedKey,
            range.contains(mixed),
            format!("{mixed} mixed-key blocks, allowed [{}, {}]", range.min, range.max),
        );
    }
    if let Some(floor) = cfg.sign_floor {
        let bad: Vec<String> = crate::inventory::TraitDomain::ALL
            .iter()
            .filter(|t| {
                let [p, n] = sign_counts[t.index()];
                !floor.holds(p, n)
            })
            .map(|t| {
                let [p, n] = sign_counts[t.index()];
                format!("{t}=+{p}/-{n}")
            })
            .collect();
        push(
            ConstraintFamily::SignBalance,
            bad.is_empty(),
            format!("each sign >= {}/{} per trait{}", floor.numerator, floor.denominator, fmt_bad(&bad)),
        );
    }
    push(
        ConstraintFamily::GapRecord,
        gap_mismatch.is_empty(),
        if gap_mismatch.is_empty() { "stored gaps match the pool".into() } else { format!("stale gaps: {}", gap_mismatch.join(", ")) },
    );

    let n = gaps.len() as f64;
    let (max_gap, min_gap, mean_gap, sd_gap) = if gaps.is_empty() {
        (0.0, 0.0, 0.0, 0.0)
    } else {
        let mean = gaps.iter().sum::<f64>() / n;
        let sd = if gaps.len() > 1 {
            (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        (
            gaps.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            gaps.iter().cloned().fold(f64::INFINITY, f64::min),
            mean,
            sd,
        )
    };

    Ok(ConstraintReport {
        checks,
        block_count: inv.block_count(),
        trait_counts,
        pair_counts,
        mixed_key_count: mixed,
        sign_counts,
        max_gap,
        mean_gap,
        sd_gap,
        min_gap,
    })
}

fn fmt_bad(bad: &[String]) -> String {
    if bad.is_empty() {
        String::new()
    } else {
        format!("; off target: {}", bad.join(", "))
    }
}

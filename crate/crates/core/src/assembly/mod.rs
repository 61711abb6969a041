//! Desirability-matched block assembly.
//!
//! Selecting `P` cross-domain statement pairs is a lexicographic two-stage
//! problem: first minimise the largest within-block desirability gap `m*`,
//! then, holding the maximum gap at `m* + epsilon`, minimise the sum of squared
//! gaps. Both stages are solved exactly by depth-first branch-and-bound over
//! trait-pair groups; [`brute_force_assemble`] is the exhaustive reference used
//! to check the solver on small instances.

mod brute;
mod config;
mod search;

pub use brute::{brute_force_assemble, BRUTE_FORCE_MAX_COMBINATIONS};
pub use config::{
    mixed_key_range, AssemblyConfig, AssemblySettings, KeyRange, SignFloor, DEFAULT_EPSILON,
    DEFAULT_NODE_BUDGET,
};

use serde::Serialize;
use thiserror::Error;

use crate::inventory::{
    block_id, validate_inventory, ConstraintFamily, ConstraintReport, GfcBlock, Inventory,
    InventoryError, ItemPool, Keying, TraitDomain, TraitPair,
};

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("item `{0}` has no desirability rating")]
    Unrated(String),
    #[error("infeasible: {family} constraints cannot be met ({detail})")]
    Infeasible {
        family: ConstraintFamily,
        detail: String,
    },
    #[error("infeasible: no selection satisfies all constraint families jointly")]
    InfeasibleCombined,
    #[error("search budget of {budget} nodes exhausted before any feasible selection was found")]
    BudgetExhausted { budget: u64 },
    #[error("instance too large for exhaustive search ({combinations} combinations)")]
    TooLarge { combinations: u128 },
    #[error("invalid assembly config: {0}")]
    Config(String),
    #[error(transparent)]
    Inventory(#[from] InventoryError),
}

/// Unordered cross-domain statement pair. `index` is the candidate id used for
/// deterministic tie-breaking.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidatePair {
    pub index: usize,
    pub left: String,
    pub right: String,
    pub left_pos: usize,
    pub right_pos: usize,
    pub left_domain: TraitDomain,
    pub right_domain: TraitDomain,
    pub left_keying: Keying,
    pub right_keying: Keying,
    pub gap: f64,
    pub mixed_key: bool,
    pub trait_pair: TraitPair,
}

impl CandidatePair {
    pub fn sq_gap(&self) -> f64 {
        self.gap * self.gap
    }

    pub(crate) fn sides(&self) -> [(usize, TraitDomain, Keying); 2] {
        [
            (self.left_pos, self.left_domain, self.left_keying),
            (self.right_pos, self.right_domain, self.right_keying),
        ]
    }
}

/// All unordered cross-domain pairs in pool order: `(i, j)` with `i < j`.
pub fn enumerate_candidates(pool: &ItemPool) -> Result<Vec<CandidatePair>, AssemblyError> {
    let items = pool.items();
    for it in items {
        if it.desirability.is_none() {
            return Err(AssemblyError::Unrated(it.id.clone()));
        }
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            let (a, b) = (&items[i], &items[j]);
            let Some(tp) = TraitPair::new(a.domain, b.domain) else { continue };
            let gap = (a.desirability.unwrap() - b.desirability.unwrap()).abs();
            out.push(CandidatePair {
                index: out.len(),
                left: a.id.clone(),
                right: b.id.clone(),
                left_pos: i,
                right_pos: j,
                left_domain: a.domain,
                right_domain: b.domain,
                left_keying: a.keying,
                right_keying: b.keying,
                gap,
                mixed_key: a.keying != b.keying,
                trait_pair: tp,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Proof {
    Optimal,
    BudgetExhaustedBestKnown,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageOne {
    pub m_star: f64,
    /// Candidate indices of a feasible selection attaining `m_star`, ascending.
    pub witness: Vec<usize>,
    pub proof: Proof,
    pub nodes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssemblySolution {
    pub inventory: Inventory,
    /// Candidate indices, ascending.
    pub selected: Vec<usize>,
    pub m_star: f64,
    pub max_gap: f64,
    pub sse: f64,
    pub proof: Proof,
    pub nodes: u64,
}

/// Fixed-point scale for squared-gap comparisons: ties in the stage-two
/// objective are decided on exact integers so every solver agrees on them.
pub(crate) const GAP_SCALE: f64 = 1e9;

pub(crate) fn gap_units(gap: f64) -> u128 {
    (gap * GAP_SCALE).round() as u128
}

pub(crate) fn sq_units(gap: f64) -> u128 {
    let g = gap_units(gap);
    g * g
}

/// Sum of squared gaps of a selection as reported in solutions.
pub fn selection_sse(cands: &[CandidatePair], selected: &[usize]) -> f64 {
    let total: u128 = selected.iter().map(|&i| sq_units(cands[i].gap)).sum();
    total as f64 / (GAP_SCALE * GAP_SCALE)
}

pub fn selection_max_gap(cands: &[CandidatePair], selected: &[usize]) -> f64 {
    selected.iter().map(|&i| cands[i].gap).fold(0.0, f64::max)
}

/// Full constraint check of a candidate selection (indices into `cands`).
pub fn selection_feasible(cands: &[CandidatePair], selected: &[usize], cfg: &AssemblyConfig) -> bool {
    if selected.len() != cfg.blocks {
        return false;
    }
    let mut used = std::collections::HashSet::new();
    let mut trait_counts = [0usize; 5];
    let mut signs = [[0usize; 2]; 5];
    let mut pairs = [0usize; 10];
    let mut mixed = 0;
    for &i in selected {
        let c = &cands[i];
        for (pos, dom, key) in c.sides() {
            if !used.insert(pos) {
                return false;
            }
            trait_counts[dom.index()] += 1;
            signs[dom.index()][(key == Keying::Negative) as usize] += 1;
        }
        pairs[c.trait_pair.index()] += 1;
        mixed += c.mixed_key as usize;
    }
    if let Some(t) = cfg.per_trait {
        if trait_counts.iter().any(|&n| n != t) {
            return false;
        }
    }
    if let Some(q) = cfg.per_trait_pair {
        if pairs.iter().any(|&n| n != q) {
            return false;
        }
    }
    if let Some(r) = cfg.mixed_key {
        if !r.contains(mixed) {
            return false;
        }
    }
    if let Some(f) = cfg.sign_floor {
        if signs.iter().any(|&[p, n]| !f.holds(p, n)) {
            return false;
        }
    }
    true
}

pub(crate) fn build_inventory(
    cands: &[CandidatePair],
    selected: &[usize],
) -> Inventory {
    Inventory::new(
        selected
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                let c = &cands[i];
                GfcBlock {
                    id: block_id(k),
                    left: c.left.clone(),
                    right: c.right.clone(),
                    desirability_gap: c.gap,
                }
            })
            .collect(),
    )
}

/// Minimal feasible maximum gap and a witness selection.
pub fn solve_stage1(cands: &[CandidatePair], cfg: &AssemblyConfig) -> Result<StageOne, AssemblyError> {
    cfg.validate()?;
    search::solve_minimax(cands, cfg)
}

/// Among selections with maximum gap at most `m_star + epsilon`, the one with the
/// smallest sum of squared gaps (ties by ascending candidate-index list).
pub fn solve_stage2(
    cands: &[CandidatePair],
    cfg: &AssemblyConfig,
    m_star: f64,
) -> Result<AssemblySolution, AssemblyError> {
    cfg.validate()?;
    search::solve_min_sse(cands, cfg, m_star, Proof::Optimal)
}

/// Runs both stages; the proof flag is `Optimal` only when both stages finished.
pub fn assemble(cands: &[CandidatePair], cfg: &AssemblyConfig) -> Result<AssemblySolution, AssemblyError> {
    let one = solve_stage1(cands, cfg)?;
    let mut sol = search::solve_min_sse(cands, cfg, one.m_star, one.proof)?;
    sol.nodes += one.nodes;
    Ok(sol)
}

/// Assembles from a rated pool and validates the result.
pub fn assemble_pool(
    pool: &ItemPool,
    cfg: &AssemblyConfig,
) -> Result<(AssemblySolution, ConstraintReport), AssemblyError> {
    let cands = enumerate_candidates(pool)?;
    let sol = assemble(&cands, cfg)?;
    let report = validate_inventory(&sol.inventory, pool, cfg)?;
    Ok((sol, report))
}

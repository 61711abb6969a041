//! Exhaustive reference solver for small instances.

use super::{
    build_inventory, selection_feasible, selection_max_gap, selection_sse, sq_units, AssemblyConfig,
    AssemblyError, AssemblySolution, CandidatePair, Proof,
};

/// Largest number of `P`-subsets [`brute_force_assemble`] will enumerate.
pub const BRUTE_FORCE_MAX_COMBINATIONS: u128 = 10_000_000;

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return acc;
        }
    }
    acc
}

/// Calls `f` with every ascending `k`-subset of `0..n` in lexicographic order.
fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Enumerates every `P`-subset of candidates, applying the same objective and
/// tie-break as the branch-and-bound solver.
pub fn brute_force_assemble(
    cands: &[CandidatePair],
    cfg: &AssemblyConfig,
) -> Result<AssemblySolution, AssemblyError> {
    cfg.validate()?;
    let p = cfg.blocks;
    let combinations = binomial(cands.len(), p);
    if combinations > BRUTE_FORCE_MAX_COMBINATIONS {
        return Err(AssemblyError::TooLarge { combinations });
    }
    let mut feasible: Vec<Vec<usize>> = Vec::new();
    let mut m_star = f64::INFINITY;
    for_each_combination(cands.len(), p, |sel| {
        if selection_feasible(cands, sel, cfg) {
            m_star = m_star.min(selection_max_gap(cands, sel));
            feasible.push(sel.to_vec());
        }
    });
    if feasible.is_empty() {
        return Err(AssemblyError::InfeasibleCombined);
    }
    let cap = m_star + cfg.epsilon;
    let selected = feasible
        .into_iter()
        .filter(|s| selection_max_gap(cands, s) <= cap)
        .min_by(|a, b| {
            let sa: u128 = a.iter().map(|&i| sq_units(cands[i].gap)).sum();
            let sb: u128 = b.iter().map(|&i| sq_units(cands[i].gap)).sum();
            (sa, a).cmp(&(sb, b))
        })
        .expect("the minimax selection itself is within the cap");
    Ok(AssemblySolution {
        inventory: build_inventory(cands, &selected),
        max_gap: selection_max_gap(cands, &selected),
        sse: selection_sse(cands, &selected),
        selected,
        m_star,
        proof: Proof::Optimal,
        nodes: combinations as u64,
    })
}

//! Depth-first branch-and-bound over trait-pair groups.
//!
//! Candidates are grouped by trait pair when a per-pair quota is active (one
//! group holding everything otherwise). Groups are searched one after another,
//! each choosing its quota of candidates in (gap, index) order, so items are the
//! only thing coupling groups. Pruning is purely combinatorial: count caps,
//! per-trait and per-sign item supply among still-usable candidates, mixed-key
//! reachability, and for the second stage a lower bound adding, per remaining
//! group, the smallest squared gaps still available.

use std::cmp::Ordering;

use super::{
    build_inventory, selection_feasible, selection_max_gap, selection_sse, sq_units,
    AssemblyConfig, AssemblyError, AssemblySolution, CandidatePair, Proof, StageOne,
};
use crate::inventory::{ConstraintFamily, Keying, TraitDomain, TraitPair};

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    FirstFeasible,
    MinSse,
}

enum Outcome {
    Found(Vec<usize>),
    Infeasible,
    Exhausted,
}

struct Group {
    list: Vec<usize>,
    quota: usize,
}

/// Derived per-trait targets shared by the diagnosis and the search.
struct Targets {
    totals: Option<[usize; 5]>,
    sign_min: [usize; 5],
}

fn targets(cfg: &AssemblyConfig) -> Result<Targets, AssemblyError> {
    let p = cfg.blocks;
    if let Some(q) = cfg.per_trait_pair {
        if 10 * q != p {
            return Err(AssemblyError::Infeasible {
                family: ConstraintFamily::DomainPair,
                detail: format!("10 pairs x {q} blocks cannot add up to {p} blocks"),
            });
        }
    }
    if let Some(t) = cfg.per_trait {
        if 5 * t != 2 * p {
            return Err(AssemblyError::Infeasible {
                family: ConstraintFamily::Domain,
                detail: format!("5 traits x {t} items cannot fill {p} blocks"),
            });
        }
    }
    let totals = match (cfg.per_trait, cfg.per_trait_pair) {
        (Some(t), _) => Some([t; 5]),
        (None, Some(q)) => Some([4 * q; 5]),
        (None, None) => None,
    };
    let mut sign_min = [0usize; 5];
    if let (Some(floor), Some(tot)) = (cfg.sign_floor, totals) {
        for t in 0..5 {
            sign_min[t] = floor.min_per_sign(tot[t]);
            if 2 * sign_min[t] > tot[t] {
                return Err(AssemblyError::Infeasible {
                    family: ConstraintFamily::SignBalance,
                    detail: format!("sign floor needs {} of each sign among {} items", sign_min[t], tot[t]),
                });
            }
        }
    }
    if let Some(r) = cfg.mixed_key {
        if r.min > p {
            return Err(AssemblyError::Infeasible {
                family: ConstraintFamily::MixedKey,
                detail: format!("at least {} mixed-key blocks requested of {p}", r.min),
            });
        }
    }
    Ok(Targets { totals, sign_min })
}

/// Checks each constraint family on its own against the full candidate set and
/// reports the first one that cannot be met.
fn diagnose(cands: &[CandidatePair], cfg: &AssemblyConfig, tg: &Targets) -> Result<(), AssemblyError> {
    let p = cfg.blocks;
    let fail = |family, detail: String| Err(AssemblyError::Infeasible { family, detail });
    if cands.len() < p {
        return fail(ConstraintFamily::Count, format!("{} candidates for {p} blocks", cands.len()));
    }
    let mut items = std::collections::BTreeMap::new();
    let mut pair_avail = [0usize; 10];
    let (mut mixed, mut plain) = (0usize, 0usize);
    for c in cands {
        for (pos, dom, key) in c.sides() {
            items.insert(pos, (dom, key));
        }
        pair_avail[c.trait_pair.index()] += 1;
        if c.mixed_key {
            mixed += 1
        } else {
            plain += 1
        }
    }
    if items.len() < 2 * p {
        return fail(ConstraintFamily::Uniqueness, format!("{} distinct items for {p} blocks", items.len()));
    }
    let mut cell = [[0usize; 2]; 5];
    for &(dom, key) in items.values() {
        cell[dom.index()][(key == Keying::Negative) as usize] += 1;
    }
    if let Some(tot) = tg.totals {
        for t in TraitDomain::ALL {
            let have = cell[t.index()][0] + cell[t.index()][1];
            if have < tot[t.index()] {
                return fail(ConstraintFamily::Domain, format!("{t} has {have} items, needs {}", tot[t.index()]));
            }
        }
    }
    if let Some(q) = cfg.per_trait_pair {
        for tp in TraitPair::all() {
            if pair_avail[tp.index()] < q {
                return fail(
                    ConstraintFamily::DomainPair,
                    format!("{tp} has {} candidates, needs {q}", pair_avail[tp.index()]),
                );
            }
        }
    }
    if let Some(r) = cfg.mixed_key {
        if mixed < r.min || plain + r.max < p {
            return fail(
                ConstraintFamily::MixedKey,
                format!("{mixed} mixed and {plain} same-key candidates for range [{}, {}]", r.min, r.max),
            );
        }
    }
    if cfg.sign_floor.is_some() {
        for t in TraitDomain::ALL {
            let need = tg.sign_min[t.index()];
            for (s, key) in [(0, "+"), (1, "-")] {
                if cell[t.index()][s] < need {
                    return fail(
                        ConstraintFamily::SignBalance,
                        format!("{t}{key} has {} items, needs {need}", cell[t.index()][s]),
                    );
                }
            }
        }
    }
    Ok(())
}

struct Search<'a> {
    cands: &'a [CandidatePair],
    cfg: &'a AssemblyConfig,
    mode: Mode,
    groups: Vec<Group>,
    totals: Option<[usize; 5]>,
    sign_min: [usize; 5],
    used: Vec<bool>,
    trait_count: [usize; 5],
    sign_count: [[usize; 2]; 5],
    mixed: usize,
    remaining: usize,
    sse: u128,
    chosen: Vec<usize>,
    best: Option<(u128, Vec<usize>)>,
    nodes: u64,
    exhausted: bool,
    done: bool,
    live_stamp: Vec<u64>,
    stamp: u64,
    live_items: Vec<usize>,
    item_cell: Vec<(usize, usize)>,
}

impl<'a> Search<'a> {
    fn new(cands: &'a [CandidatePair], cfg: &'a AssemblyConfig, tg: &Targets, cap: f64, mode: Mode) -> Self {
        let n_items = cands
            .iter()
            .map(|c| c.left_pos.max(c.right_pos) + 1)
            .max()
            .unwrap_or(0);
        let mut item_cell = vec![(0, 0); n_items];
        for c in cands {
            for (pos, dom, key) in c.sides() {
                item_cell[pos] = (dom.index(), (key == Keying::Negative) as usize);
            }
        }
        let allowed: Vec<usize> = cands.iter().filter(|c| c.gap <= cap).map(|c| c.index).collect();
        let by_gap = |a: &usize, b: &usize| {
            cands[*a]
                .gap
                .partial_cmp(&cands[*b].gap)
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(b))
        };
        let mut groups = match cfg.per_trait_pair {
            Some(q) => {
                let mut gs: Vec<(usize, Group)> = TraitPair::all()
                    .into_iter()
                    .map(|tp| {
                        let mut list: Vec<usize> =
                            allowed.iter().copied().filter(|&i| cands[i].trait_pair == tp).collect();
                        list.sort_by(by_gap);
                        (tp.index(), Group { list, quota: q })
                    })
                    .collect();
                // most constrained group first
                gs.sort_by_key(|(k, g)| (g.list.len(), *k));
                gs.into_iter().map(|(_, g)| g).collect()
            }
            None => {
                let mut list = allowed;
                list.sort_by(by_gap);
                vec![Group { list, quota: cfg.blocks }]
            }
        };
        groups.retain(|g| g.quota > 0);
        Search {
            cands,
            cfg,
            mode,
            groups,
            totals: tg.totals,
            sign_min: tg.sign_min,
            used: vec![false; n_items],
            trait_count: [0; 5],
            sign_count: [[0; 2]; 5],
            mixed: 0,
            remaining: cfg.blocks,
            sse: 0,
            chosen: Vec::with_capacity(cfg.blocks),
            best: None,
            nodes: 0,
            exhausted: false,
            done: false,
            live_stamp: vec![0; n_items],
            stamp: 0,
            live_items: Vec::with_capacity(n_items),
            item_cell,
        }
    }

    fn run(mut self) -> (Outcome, u64, bool) {
        if self.groups.is_empty() {
            return (Outcome::Infeasible, 0, false);
        }
        if self.bounds_ok(0, 0, self.groups[0].quota) {
            let q = self.groups[0].quota;
            self.dfs(0, 0, q);
        }
        let (nodes, exhausted) = (self.nodes, self.exhausted);
        let outcome = match (self.best, exhausted) {
            (Some((_, sel)), _) => Outcome::Found(sel),
            (None, true) => Outcome::Exhausted,
            (None, false) => Outcome::Infeasible,
        };
        (outcome, nodes, exhausted)
    }

    fn free(&self, c: &CandidatePair) -> bool {
        !self.used[c.left_pos] && !self.used[c.right_pos]
    }

    fn can_add(&self, c: &CandidatePair) -> bool {
        for (_, dom, key) in c.sides() {
            let t = dom.index();
            if let Some(tot) = self.totals {
                if self.trait_count[t] + 1 > tot[t] {
                    return false;
                }
                if self.cfg.sign_floor.is_some() {
                    let s = (key == Keying::Negative) as usize;
                    if self.sign_count[t][s] + 1 > tot[t] - self.sign_min[t] {
                        return false;
                    }
                }
            }
        }
        if let Some(r) = self.cfg.mixed_key {
            if c.mixed_key && self.mixed + 1 > r.max {
                return false;
            }
            if !c.mixed_key && (self.remaining - 1) + self.mixed < r.min {
                return false;
            }
        }
        true
    }

    fn apply(&mut self, i: usize, sign: isize) {
        let c = &self.cands[i];
        let upd = |x: &mut usize| {
            if sign > 0 {
                *x += 1
            } else {
                *x -= 1
            }
        };
        for (pos, dom, key) in c.sides() {
            self.used[pos] = sign > 0;
            upd(&mut self.trait_count[dom.index()]);
            upd(&mut self.sign_count[dom.index()][(key == Keying::Negative) as usize]);
        }
        if c.mixed_key {
            upd(&mut self.mixed);
        }
        let sq = sq_units(c.gap);
        if sign > 0 {
            self.sse += sq;
            self.remaining -= 1;
            self.chosen.push(i);
        } else {
            self.sse -= sq;
            self.remaining += 1;
            self.chosen.pop();
        }
    }

    /// Feasibility and bound checks for the subtree that continues group `g`
    /// at list position `from` with `need` picks left in that group.
    fn bounds_ok(&mut self, g: usize, from: usize, need: usize) -> bool {
        if let (Some(r), true) = (self.cfg.mixed_key, self.remaining > 0) {
            if self.mixed + self.remaining < r.min {
                return false;
            }
        }
        if let Some(tot) = self.totals {
            for t in 0..5 {
                if tot[t] - self.trait_count[t] > self.remaining {
                    return false;
                }
            }
        }
        self.stamp += 1;
        self.live_items.clear();
        let mut lower = 0u128;
        let mut min_index = usize::MAX;
        let (mut mixed_avail, mut plain_avail) = (0usize, 0usize);
        for h in g..self.groups.len() {
            let (start, want) = if h == g { (from, need) } else { (0, self.groups[h].quota) };
            if want == 0 {
                continue;
            }
            let mut found = 0usize;
            for k in start..self.groups[h].list.len() {
                let i = self.groups[h].list[k];
                let c = &self.cands[i];
                if !self.free(c) {
                    continue;
                }
                if found < want {
                    lower += sq_units(c.gap);
                }
                found += 1;
                min_index = min_index.min(i);
                if c.mixed_key {
                    mixed_avail += 1
                } else {
                    plain_avail += 1
                }
                for pos in [c.left_pos, c.right_pos] {
                    if self.live_stamp[pos] != self.stamp {
                        self.live_stamp[pos] = self.stamp;
                        self.live_items.push(pos);
                    }
                }
            }
            if found < want {
                return false;
            }
        }
        if let Some(r) = self.cfg.mixed_key {
            if self.mixed + mixed_avail < r.min {
                return false;
            }
            let plain_needed = self.remaining.saturating_sub(r.max - self.mixed);
            if plain_avail < plain_needed {
                return false;
            }
        }
        if let Some(tot) = self.totals {
            let mut live = [[0usize; 2]; 5];
            for &pos in &self.live_items {
                let (t, s) = self.item_cell[pos];
                live[t][s] += 1;
            }
            for t in 0..5 {
                let need_t = tot[t] - self.trait_count[t];
                if live[t][0] + live[t][1] < need_t {
                    return false;
                }
                if self.cfg.sign_floor.is_some() {
                    for s in 0..2 {
                        if self.sign_count[t][s] + live[t][s] < self.sign_min[t] {
                            return false;
                        }
                    }
                }
            }
        }
        if self.mode == Mode::MinSse {
            if let Some((best, best_sel)) = &self.best {
                let bound = self.sse + lower;
                match bound.cmp(best) {
                    Ordering::Greater => return false,
                    Ordering::Equal => {
                        // A tie only wins with a lexicographically smaller index list.
                        let lowest = self.chosen.iter().copied().min().unwrap_or(usize::MAX).min(min_index);
                        if lowest > best_sel[0] {
                            return false;
                        }
                    }
                    Ordering::Less => {}
                }
            }
        }
        true
    }

    fn dfs(&mut self, g: usize, start: usize, need: usize) {
        if self.done || self.exhausted {
            return;
        }
        self.nodes += 1;
        if self.nodes > self.cfg.node_budget {
            self.exhausted = true;
            return;
        }
        if need == 0 {
            if g + 1 == self.groups.len() {
                self.leaf();
            } else {
                let q = self.groups[g + 1].quota;
                self.dfs(g + 1, 0, q);
            }
            return;
        }
        let len = self.groups[g].list.len();
        for pos in start..len {
            if len - pos < need {
                break;
            }
            let i = self.groups[g].list[pos];
            let c = &self.cands[i];
            if !self.free(c) || !self.can_add(c) {
                continue;
            }
            self.apply(i, 1);
            let descend = if need - 1 == 0 {
                g + 1 == self.groups.len() || self.bounds_ok(g + 1, 0, self.groups[g + 1].quota)
            } else {
                self.bounds_ok(g, pos + 1, need - 1)
            };
            if descend {
                self.dfs(g, pos + 1, need - 1);
            }
            self.apply(i, -1);
            if self.done || self.exhausted {
                return;
            }
        }
    }

    fn leaf(&mut self) {
        let mut sel = self.chosen.clone();
        sel.sort_unstable();
        if !selection_feasible(self.cands, &sel, self.cfg) {
            return;
        }
        match self.mode {
            Mode::FirstFeasible => {
                self.best = Some((self.sse, sel));
                self.done = true;
            }
            Mode::MinSse => {
                let better = match &self.best {
                    None => true,
                    Some((b, bs)) => (self.sse, &sel) < (*b, bs),
                };
                if better {
                    self.best = Some((self.sse, sel));
                }
            }
        }
    }
}

fn distinct_gaps(cands: &[CandidatePair]) -> Vec<f64> {
    let mut g: Vec<f64> = cands.iter().map(|c| c.gap).collect();
    g.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    g.dedup();
    g
}

pub(super) fn solve_minimax(cands: &[CandidatePair], cfg: &AssemblyConfig) -> Result<StageOne, AssemblyError> {
    let tg = targets(cfg)?;
    diagnose(cands, cfg, &tg)?;
    let gaps = distinct_gaps(cands);
    let mut nodes = 0u64;
    let mut proven = true;
    let check = |cap: f64, nodes: &mut u64| {
        let (out, n, _) = Search::new(cands, cfg, &tg, cap, Mode::FirstFeasible).run();
        *nodes += n;
        out
    };
    let top = *gaps.last().expect("diagnose guarantees candidates");
    let mut witness = match check(top, &mut nodes) {
        Outcome::Found(sel) => sel,
        Outcome::Infeasible => return Err(AssemblyError::InfeasibleCombined),
        Outcome::Exhausted => return Err(AssemblyError::BudgetExhausted { budget: cfg.node_budget }),
    };
    // smallest gap value whose cap admits a feasible selection
    let (mut lo, mut hi) = (0usize, gaps.len() - 1);
    let witness_max = selection_max_gap(cands, &witness);
    hi = hi.min(gaps.partition_point(|&g| g < witness_max));
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        match check(gaps[mid], &mut nodes) {
            Outcome::Found(sel) => {
                let m = selection_max_gap(cands, &sel);
                hi = gaps.partition_point(|&g| g < m);
                witness = sel;
            }
            Outcome::Infeasible => lo = mid + 1,
            Outcome::Exhausted => {
                proven = false;
                lo = mid + 1;
            }
        }
    }
    Ok(StageOne {
        m_star: selection_max_gap(cands, &witness),
        witness,
        proof: if proven { Proof::Optimal } else { Proof::BudgetExhaustedBestKnown },
        nodes,
    })
}

pub(super) fn solve_min_sse(
    cands: &[CandidatePair],
    cfg: &AssemblyConfig,
    m_star: f64,
    stage_one: Proof,
) -> Result<AssemblySolution, AssemblyError> {
    let tg = targets(cfg)?;
    let cap = m_star + cfg.epsilon;
    let (out, nodes, exhausted) = Search::new(cands, cfg, &tg, cap, Mode::MinSse).run();
    let selected = match out {
        Outcome::Found(sel) => sel,
        Outcome::Exhausted => return Err(AssemblyError::BudgetExhausted { budget: cfg.node_budget }),
        Outcome::Infeasible => {
            diagnose(cands, cfg, &tg)?;
            return Err(AssemblyError::InfeasibleCombined);
        }
    };
    let proof = if !exhausted && stage_one == Proof::Optimal {
        Proof::Optimal
    } else {
        Proof::BudgetExhaustedBestKnown
    };
    Ok(AssemblySolution {
        inventory: build_inventory(cands, &selected),
        max_gap: selection_max_gap(cands, &selected),
        sse: selection_sse(cands, &selected),
        selected,
        m_star,
        proof,
        nodes,
    })
}

//! Pooled response data, the unconstrained parameter layout and the log
//! posterior of the graded response model (Likert) and the ordinal Thurstonian
//! model (GFC).

use std::collections::BTreeSet;
use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use super::IrtError;
use crate::inventory::{Condition, Format, Inventory, ItemPool, Keying, ResponseSet, TraitDomain, CATEGORY_COUNT};
use crate::ordinal::{self, Thresholds, THRESHOLDS};

pub const TRAITS: usize = 5;

/// Prior standard deviation of the half-normal on `a⁺`.
pub const A_PRIOR_SD: f64 = 0.5;
/// Prior standard deviation of every threshold.
pub const KAPPA_PRIOR_SD: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    /// Graded response model on Likert answers.
    Grm,
    /// Ordinal Thurstonian model on graded forced-choice answers.
    Gfc,
}

impl Model {
    pub fn for_format(format: Format) -> Self {
        match format {
            Format::Likert => Model::Grm,
            Format::Gfc => Model::Gfc,
        }
    }

    pub fn format(self) -> Format {
        match self {
            Model::Grm => Format::Likert,
            Model::Gfc => Format::Gfc,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Model::Grm => "grm",
            Model::Gfc => "gfc",
        }
    }
}

/// Identity of one response unit (one row of the response matrix).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UnitMeta {
    pub respondent_id: String,
    pub persona_id: String,
    pub condition: Condition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatementDesign {
    pub id: String,
    pub domain: TraitDomain,
    pub keying: Keying,
}

/// A forced-choice block as indices into the statement list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDesign {
    pub id: String,
    pub left: usize,
    pub right: usize,
}

/// Complete response matrix plus design.
///
/// Columns are statements for the GRM and blocks for the GFC model; every
/// column owns one set of six thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelData {
    model: Model,
    units: Vec<UnitMeta>,
    statements: Vec<StatementDesign>,
    blocks: Vec<BlockDesign>,
    responses: Vec<u8>,
    excluded: usize,
}

impl ModelData {
    /// Builds a model from an explicit design; `responses` is row-major,
    /// units × columns.
    pub fn new(
        model: Model,
        units: Vec<UnitMeta>,
        statements: Vec<StatementDesign>,
        blocks: Vec<BlockDesign>,
        responses: Vec<u8>,
    ) -> Result<Self, IrtError> {
        if statements.is_empty() {
            return Err(IrtError::Design("no statements".into()));
        }
        let mut ids = BTreeSet::new();
        for s in &statements {
            if !ids.insert(s.id.as_str()) {
                return Err(IrtError::Design(format!("duplicate statement `{}`", s.id)));
            }
        }
        if model == Model::Gfc {
            if blocks.is_empty() {
                return Err(IrtError::Design("no blocks".into()));
            }
            for b in &blocks {
                let (l, r) = (statements.get(b.left), statements.get(b.right));
                match (l, r) {
                    (Some(l), Some(r)) if l.domain != r.domain => {}
                    (Some(_), Some(_)) => {
                        return Err(IrtError::Design(format!("block `{}` pairs statements of one trait", b.id)))
                    }
                    _ => return Err(IrtError::Design(format!("block `{}` references a missing statement", b.id))),
                }
            }
        }
        let data = ModelData { model, units, statements, blocks, responses, excluded: 0 };
        let expected = data.units.len() * data.columns();
        if data.responses.len() != expected {
            return Err(IrtError::Dimension { expected, got: data.responses.len() });
        }
        if let Some(&y) = data.responses.iter().find(|y| !(1..=CATEGORY_COUNT).contains(*y)) {
            return Err(IrtError::Design(format!("response {y} outside 1..=7")));
        }
        let mut seen = BTreeSet::new();
        for u in &data.units {
            if !seen.insert(u) {
                return Err(IrtError::Design(format!(
                    "duplicate response unit ({}, {}, {})",
                    u.respondent_id, u.persona_id, u.condition
                )));
            }
        }
        Ok(data)
    }

    /// Pools every complete response set of `format`; incomplete ones are
    /// skipped and counted in [`ModelData::excluded`].
    pub fn from_response_sets(
        format: Format,
        sets: &[ResponseSet],
        inventory: &Inventory,
        pool: &ItemPool,
    ) -> Result<Self, IrtError> {
        let model = Model::for_format(format);
        let ids = inventory.statements();
        let mut statements = Vec::with_capacity(ids.len());
        for id in &ids {
            let it = pool.require(id).map_err(|e| IrtError::Design(e.to_string()))?;
            statements.push(StatementDesign { id: id.clone(), domain: it.domain, keying: it.keying });
        }
        let pos = |id: &str| ids.iter().position(|s| s == id).expect("statement listed");
        let blocks = match model {
            Model::Grm => Vec::new(),
            Model::Gfc => inventory
                .blocks()
                .iter()
                .map(|b| BlockDesign { id: b.id.clone(), left: pos(&b.left), right: pos(&b.right) })
                .collect(),
        };
        let columns = inventory.unit_ids(format);
        let mut units = Vec::new();
        let mut responses = Vec::new();
        let mut excluded = 0;
        for rs in sets.iter().filter(|rs| rs.format == format) {
            if rs.check_complete(inventory).is_err() {
                excluded += 1;
                continue;
            }
            units.push(UnitMeta {
                respondent_id: rs.respondent_id.clone(),
                persona_id: rs.persona_id.clone(),
                condition: rs.condition,
            });
            responses.extend(columns.iter().map(|c| rs.answers[c]));
        }
        if units.is_empty() {
            return Err(IrtError::EmptyData);
        }
        let mut data = ModelData::new(model, units, statements, blocks, responses)?;
        data.excluded = excluded;
        Ok(data)
    }

    pub fn model(&self) -> Model {
        self.model
    }

    pub fn units(&self) -> &[UnitMeta] {
        &self.units
    }

    pub fn statements(&self) -> &[StatementDesign] {
        &self.statements
    }

    pub fn blocks(&self) -> &[BlockDesign] {
        &self.blocks
    }

    pub fn responses(&self) -> &[u8] {
        &self.responses
    }

    /// Response sets skipped because they were incomplete.
    pub fn excluded(&self) -> usize {
        self.excluded
    }

    /// Number of response columns (statements or blocks).
    pub fn columns(&self) -> usize {
        match self.model {
            Model::Grm => self.statements.len(),
            Model::Gfc => self.blocks.len(),
        }
    }

    pub fn column_ids(&self) -> Vec<String> {
        match self.model {
            Model::Grm => self.statements.iter().map(|s| s.id.clone()).collect(),
            Model::Gfc => self.blocks.iter().map(|b| b.id.clone()).collect(),
        }
    }

    pub fn response(&self, unit: usize, column: usize) -> u8 {
        self.responses[unit * self.columns() + column]
    }

    pub fn layout(&self) -> Layout {
        Layout { units: self.units.len(), statements: self.statements.len(), groups: self.columns() }
    }

    /// Copy with the unit rows reordered: row `i` of the result is row `order[i]`.
    pub fn permute_units(&self, order: &[usize]) -> Self {
        let c = self.columns();
        let mut out = self.clone();
        out.units = order.iter().map(|&i| self.units[i].clone()).collect();
        out.responses = order.iter().flat_map(|&i| self.responses[i * c..(i + 1) * c].iter().copied()).collect();
        out
    }
}

/// Positions inside the unconstrained parameter vector: `θ` (units × 5),
/// then `ln a⁺` per statement, then six raw thresholds per column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub units: usize,
    pub statements: usize,
    pub groups: usize,
}

impl Layout {
    pub fn dim(&self) -> usize {
        self.units * TRAITS + self.statements + self.groups * THRESHOLDS
    }

    pub fn theta(&self, unit: usize, t: usize) -> usize {
        unit * TRAITS + t
    }

    pub fn log_a(&self, statement: usize) -> usize {
        self.units * TRAITS + statement
    }

    pub fn raw(&self, group: usize) -> std::ops::Range<usize> {
        let start = self.units * TRAITS + self.statements + group * THRESHOLDS;
        start..start + THRESHOLDS
    }
}

/// Constrained parameters reconstructed from an unconstrained vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub theta: Vec<[f64; TRAITS]>,
    pub a_plus: Vec<f64>,
    pub kappa: Vec<Thresholds>,
}

impl ParamVector {
    pub fn from_unconstrained(layout: &Layout, x: &[f64]) -> Result<Self, IrtError> {
        check_vector(layout, x)?;
        let theta = (0..layout.units)
            .map(|i| std::array::from_fn(|t| x[layout.theta(i, t)]))
            .collect();
        let a_plus = (0..layout.statements).map(|j| x[layout.log_a(j)].exp()).collect();
        let kappa = (0..layout.groups).map(|g| ordinal::kappa_from_raw(&x[layout.raw(g)])).collect();
        Ok(ParamVector { theta, a_plus, kappa })
    }

    pub fn to_unconstrained(&self, layout: &Layout) -> Result<Vec<f64>, IrtError> {
        if self.theta.len() != layout.units || self.a_plus.len() != layout.statements || self.kappa.len() != layout.groups
        {
            return Err(IrtError::Dimension { expected: layout.dim(), got: self.theta.len() * TRAITS });
        }
        let mut x = vec![0.0; layout.dim()];
        for (i, th) in self.theta.iter().enumerate() {
            for t in 0..TRAITS {
                x[layout.theta(i, t)] = th[t];
            }
        }
        for (j, a) in self.a_plus.iter().enumerate() {
            if !(*a > 0.0) {
                return Err(IrtError::Design(format!("a⁺ must be positive, got {a}")));
            }
            x[layout.log_a(j)] = a.ln();
        }
        for (g, k) in self.kappa.iter().enumerate() {
            ordinal::check_thresholds(k).map_err(|e| IrtError::Design(e.to_string()))?;
            x[layout.raw(g)].copy_from_slice(&ordinal::raw_from_kappa(k));
        }
        Ok(x)
    }
}

fn check_vector(layout: &Layout, x: &[f64]) -> Result<(), IrtError> {
    if x.len() != layout.dim() {
        return Err(IrtError::Dimension { expected: layout.dim(), got: x.len() });
    }
    if let Some(index) = x.iter().position(|v| !v.is_finite()) {
        return Err(IrtError::NonFinite { index });
    }
    Ok(())
}

/// Compensated (Neumaier) summation so that tiny changes of the log posterior
/// near the mode remain visible to the line search.
#[derive(Debug, Clone, Copy, Default)]
struct Sum {
    s: f64,
    c: f64,
}

impl Sum {
    fn add(&mut self, v: f64) {
        let t = self.s + v;
        if self.s.abs() >= v.abs() {
            self.c += (self.s - t) + v;
        } else {
            self.c += (v - t) + self.s;
        }
        self.s = t;
    }

    fn value(self) -> f64 {
        self.s + self.c
    }
}

/// Log likelihood and log prior (including the log-Jacobian of the
/// unconstrained parameterisation), each up to an additive constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDensityParts {
    pub log_likelihood: f64,
    pub log_prior: f64,
}

impl LogDensityParts {
    pub fn total(&self) -> f64 {
        self.log_likelihood + self.log_prior
    }
}

/// Evaluates the log posterior and, when `grad` is given, overwrites it with
/// the gradient with respect to the unconstrained vector `x`.
pub fn evaluate(data: &ModelData, x: &[f64], mut grad: Option<&mut [f64]>) -> Result<LogDensityParts, IrtError> {
    let layout = data.layout();
    check_vector(&layout, x)?;
    if let Some(g) = grad.as_deref() {
        if g.len() != x.len() {
            return Err(IrtError::Dimension { expected: x.len(), got: g.len() });
        }
    }
    let a: Vec<f64> = (0..layout.statements).map(|j| x[layout.log_a(j)].exp()).collect();
    let signed: Vec<f64> = data.statements.iter().zip(&a).map(|(s, a)| s.keying.sign() * a).collect();
    let traits: Vec<usize> = data.statements.iter().map(|s| s.domain.index()).collect();
    let kappa: Vec<Thresholds> = (0..layout.groups).map(|g| ordinal::kappa_from_raw(&x[layout.raw(g)])).collect();
    // exact category widths, immune to rounding of κ
    let gaps: Vec<Thresholds> = (0..layout.groups)
        .map(|g| {
            let raw = &x[layout.raw(g)];
            std::array::from_fn(|k| if k == 0 { 0.0 } else { raw[k].exp() })
        })
        .collect();
    let width = |g: usize, y: u8| if (2..=6).contains(&y) { gaps[g][y as usize - 1] } else { 0.0 };
    let mut d_kappa = vec![[0.0; THRESHOLDS]; layout.groups];
    let mut lik = Sum::default();
    let want_grad = grad.is_some();
    let mut g_buf = if want_grad { vec![0.0; x.len()] } else { Vec::new() };
    let cols = data.columns();

    for i in 0..layout.units {
        let th = &x[layout.theta(i, 0)..layout.theta(i, 0) + TRAITS];
        let row = &data.responses[i * cols..(i + 1) * cols];
        for (c, &y) in row.iter().enumerate() {
            match data.model {
                Model::Grm => {
                    let eta = signed[c] * th[traits[c]];
                    let t = ordinal::term_with_gap(eta, &kappa[c], width(c, y), y);
                    lik.add(t.log_p);
                    if want_grad {
                        g_buf[layout.theta(i, traits[c])] += t.d_eta * signed[c];
                        g_buf[layout.log_a(c)] += t.d_eta * eta;
                        accumulate(&mut d_kappa[c], &t);
                    }
                }
                Model::Gfc => {
                    let b = &data.blocks[c];
                    let (l, r) = (b.left, b.right);
                    let mu_l = signed[l] * th[traits[l]];
                    let mu_r = signed[r] * th[traits[r]];
                    let eta = (mu_r - mu_l) / SQRT_2;
                    let t = ordinal::term_with_gap(eta, &kappa[c], width(c, y), y);
                    lik.add(t.log_p);
                    if want_grad {
                        let d = t.d_eta / SQRT_2;
                        g_buf[layout.theta(i, traits[r])] += d * signed[r];
                        g_buf[layout.theta(i, traits[l])] -= d * signed[l];
                        g_buf[layout.log_a(r)] += d * mu_r;
                        g_buf[layout.log_a(l)] -= d * mu_l;
                        accumulate(&mut d_kappa[c], &t);
                    }
                }
            }
        }
    }

    let mut prior = Sum::default();
    // θ ~ N(0, I₅)
    for idx in 0..layout.units * TRAITS {
        prior.add(-0.5 * x[idx] * x[idx]);
        if want_grad {
            g_buf[idx] -= x[idx];
        }
    }
    // a⁺ ~ half-Normal(0, 0.5) on u = ln a⁺, with Jacobian e^u
    let inv_var_a = 1.0 / (A_PRIOR_SD * A_PRIOR_SD);
    for (j, &aj) in a.iter().enumerate() {
        let u = x[layout.log_a(j)];
        prior.add(-0.5 * aj * aj * inv_var_a + u);
        if want_grad {
            g_buf[layout.log_a(j)] += -aj * aj * inv_var_a + 1.0;
        }
    }
    // κ ~ N(0, 1.5²) per component, on (first cutpoint, log-gaps)
    let inv_var_k = 1.0 / (KAPPA_PRIOR_SD * KAPPA_PRIOR_SD);
    for g in 0..layout.groups {
        let raw = &x[layout.raw(g)];
        for k in 0..THRESHOLDS {
            prior.add(-0.5 * kappa[g][k] * kappa[g][k] * inv_var_k);
            d_kappa[g][k] -= kappa[g][k] * inv_var_k;
        }
        prior.add(ordinal::raw_log_jacobian(raw));
        if want_grad {
            let pulled = ordinal::pullback_kappa_grad(raw, &d_kappa[g]);
            for (k, idx) in layout.raw(g).enumerate() {
                g_buf[idx] += pulled[k] + if k == 0 { 0.0 } else { 1.0 };
            }
        }
    }

    let parts = LogDensityParts { log_likelihood: lik.value(), log_prior: prior.value() };
    if !parts.total().is_finite() {
        return Err(IrtError::NonFiniteDensity);
    }
    if let Some(g) = grad.as_deref_mut() {
        g.copy_from_slice(&g_buf);
    }
    Ok(parts)
}

fn accumulate(dk: &mut Thresholds, t: &ordinal::Term) {
    for (j, v) in [t.d_lo, t.d_hi].into_iter().flatten() {
        dk[j] += v;
    }
}

pub fn log_posterior(data: &ModelData, x: &[f64]) -> Result<f64, IrtError> {
    evaluate(data, x, None).map(|p| p.total())
}

pub fn grad_log_posterior(data: &ModelData, x: &[f64]) -> Result<Vec<f64>, IrtError> {
    let mut g = vec![0.0; x.len()];
    evaluate(data, x, Some(&mut g))?;
    Ok(g)
}

/// Value and gradient in one pass.
pub fn log_posterior_grad(data: &ModelData, x: &[f64], grad: &mut [f64]) -> Result<f64, IrtError> {
    evaluate(data, x, Some(grad)).map(|p| p.total())
}

/// Deterministic starting point: `θ = 0`, `a⁺ = 1`, thresholds at the
/// smoothed empirical cumulative logits of each column.
pub fn default_init(data: &ModelData) -> Vec<f64> {
    let layout = data.layout();
    let mut x = vec![0.0; layout.dim()];
    let cols = data.columns();
    for g in 0..cols {
        let mut counts = [0.5f64; 7];
        for i in 0..layout.units {
            counts[data.response(i, g) as usize - 1] += 1.0;
        }
        let total: f64 = counts.iter().sum();
        let mut kappa = [0.0; THRESHOLDS];
        let mut above = total;
        for k in 0..THRESHOLDS {
            above -= counts[k];
            // σ(−κ_k) = P(Y ≥ k + 2)
            let p = above / total;
            kappa[k] = (1.0 - p).ln() - p.ln();
        }
        x[layout.raw(g)].copy_from_slice(&ordinal::raw_from_kappa(&kappa));
    }
    x
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    const SYM: Thresholds = [-1.5, -0.9, -0.3, 0.3, 0.9, 1.5];

    fn unit(i: usize) -> UnitMeta {
        UnitMeta { respondent_id: "m".into(), persona_id: format!("P{i:03}"), condition: Condition::Honest }
    }

    fn stmt(id: &str, d: TraitDomain, k: Keying) -> StatementDesign {
        StatementDesign { id: id.into(), domain: d, keying: k }
    }

    /// Random small design; traits O and N never used in the GRM case.
    pub(crate) fn random_data(model: Model, seed: u64) -> ModelData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let doms = [TraitDomain::A, TraitDomain::C, TraitDomain::E];
        let statements: Vec<_> = (0..6)
            .map(|j| {
                let k = if rng.random::<bool>() { Keying::Positive } else { Keying::Negative };
                stmt(&format!("S{j}"), doms[j % 3], k)
            })
            .collect();
        let blocks = match model {
            Model::Grm => vec![],
            Model::Gfc => vec![
                BlockDesign { id: "B1".into(), left: 0, right: 1 },
                BlockDesign { id: "B2".into(), left: 2, right: 3 },
                BlockDesign { id: "B3".into(), left: 4, right: 0 },
            ],
        };
        let n = 7;
        let cols = if model == Model::Grm { 6 } else { 3 };
        let responses = (0..n * cols).map(|_| rng.random_range(1..=7u8)).collect();
        ModelData::new(model, (0..n).map(unit).collect(), statements, blocks, responses).unwrap()
    }

    fn random_point(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..dim).map(|_| 0.8 * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    #[test]
    fn layout_positions_are_disjoint_and_cover() {
        let l = Layout { units: 3, statements: 4, groups: 2 };
        let mut seen = vec![false; l.dim()];
        for i in 0..3 {
            for t in 0..5 {
                seen[l.theta(i, t)] = true;
            }
        }
        for j in 0..4 {
            seen[l.log_a(j)] = true;
        }
        for g in 0..2 {
            for p in l.raw(g) {
                assert!(!seen[p]);
                seen[p] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn reconstruction_is_ordered_and_positive_for_any_finite_vector() {
        let data = random_data(Model::Gfc, 1);
        let layout = data.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            // raw log-gaps far below −8 underflow against κ of order e⁸ in f64
            let x: Vec<f64> = (0..layout.dim()).map(|_| rng.random_range(-8.0..8.0)).collect();
            let p = ParamVector::from_unconstrained(&layout, &x).unwrap();
            assert!(p.a_plus.iter().all(|&a| a > 0.0));
            for k in &p.kappa {
                assert!(k.windows(2).all(|w| w[0] < w[1]));
            }
        }
        let x = random_point(layout.dim(), &mut rng);
        let back = ParamVector::from_unconstrained(&layout, &x).unwrap().to_unconstrained(&layout).unwrap();
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn empty_data_gives_prior_only() {
        let data = ModelData::new(Model::Grm, vec![], vec![stmt("S", TraitDomain::A, Keying::Positive)], vec![], vec![])
            .unwrap();
        let x = vec![0.3; data.layout().dim()];
        let p = evaluate(&data, &x, None).unwrap();
        assert_eq!(p.log_likelihood, 0.0);
        assert!(p.log_prior.is_finite());
    }

    #[test]
    fn single_response_matches_closed_form() {
        let data = ModelData::new(
            Model::Grm,
            vec![unit(0)],
            vec![stmt("S", TraitDomain::A, Keying::Positive)],
            vec![],
            vec![4],
        )
        .unwrap();
        let layout = data.layout();
        let params = ParamVector { theta: vec![[0.0; 5]], a_plus: vec![1.3], kappa: vec![SYM] };
        let x = params.to_unconstrained(&layout).unwrap();
        let p = evaluate(&data, &x, None).unwrap();
        let expected = (ordinal::sigmoid(0.3) - ordinal::sigmoid(-0.3)).ln();
        assert!((p.log_likelihood - expected).abs() < 1e-14);
    }

    #[test]
    fn gfc_eta_is_scaled_once() {
        // μ_R = 1.0·0.8·1 = 0.8, μ_L = −(0.5·0.4) = −0.2 ⇒ η = 1.0/√2
        let statements =
            vec![stmt("L", TraitDomain::A, Keying::Negative), stmt("R", TraitDomain::C, Keying::Positive)];
        let blocks = vec![BlockDesign { id: "B".into(), left: 0, right: 1 }];
        let data = ModelData::new(Model::Gfc, vec![unit(0)], statements, blocks, vec![5]).unwrap();
        let params = ParamVector { theta: vec![[0.4, 1.0, 0.0, 0.0, 0.0]], a_plus: vec![0.5, 0.8], kappa: vec![SYM] };
        let x = params.to_unconstrained(&data.layout()).unwrap();
        let lik = evaluate(&data, &x, None).unwrap().log_likelihood;
        let eta = 1.0 / SQRT_2;
        assert!((lik - ordinal::log_prob(eta, &SYM, 5)).abs() < 1e-14);
        assert!((lik - ordinal::log_prob(1.0, &SYM, 5)).abs() > 1e-3);
    }

    fn fd_check(data: &ModelData, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = data.layout().dim();
        let x = random_point(dim, &mut rng);
        let g = grad_log_posterior(data, &x).unwrap();
        let h = 1e-5;
        for k in 0..dim {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[k] += h;
            m[k] -= h;
            let fd = (log_posterior(data, &p).unwrap() - log_posterior(data, &m).unwrap()) / (2.0 * h);
            let rel = (g[k] - fd).abs() / g[k].abs().max(fd.abs()).max(1.0);
            assert!(rel < 1e-5, "coord {k}: analytic {} fd {fd}", g[k]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..5 {
            fd_check(&random_data(Model::Grm, seed), 100 + seed);
            fd_check(&random_data(Model::Gfc, seed), 200 + seed);
        }
    }

    #[test]
    fn untouched_traits_have_prior_gradient() {
        let data = random_data(Model::Grm, 3);
        let layout = data.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_point(layout.dim(), &mut rng);
        let g = grad_log_posterior(&data, &x).unwrap();
        for i in 0..layout.units {
            for t in [TraitDomain::N.index(), TraitDomain::O.index()] {
                assert_eq!(g[layout.theta(i, t)], -x[layout.theta(i, t)]);
            }
        }
    }

    #[test]
    fn non_finite_parameters_are_rejected() {
        let data = random_data(Model::Grm, 0);
        let mut x = vec![0.0; data.layout().dim()];
        x[2] = f64::NAN;
        assert!(matches!(log_posterior(&data, &x), Err(IrtError::NonFinite { index: 2 })));
        assert!(matches!(log_posterior(&data, &x[1..]), Err(IrtError::Dimension { .. })));
    }

    #[test]
    fn keying_flip_with_reversed_answers_and_thresholds_is_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for seed in 0..20 {
            let data = random_data(Model::Grm, seed);
            let layout = data.layout();
            let x = random_point(layout.dim(), &mut rng);
            let j = (seed as usize) % data.statements().len();
            let mut flipped = data.clone();
            flipped.statements[j].keying = flipped.statements[j].keying.flipped();
            for i in 0..layout.units {
                let idx = i * data.columns() + j;
                flipped.responses[idx] = 8 - flipped.responses[idx];
            }
            let mut params = ParamVector::from_unconstrained(&layout, &x).unwrap();
            let k = params.kappa[j];
            params.kappa[j] = std::array::from_fn(|m| -k[THRESHOLDS - 1 - m]);
            let y = params.to_unconstrained(&layout).unwrap();
            let (a, b) = (evaluate(&data, &x, None).unwrap(), evaluate(&flipped, &y, None).unwrap());
            assert!((a.log_likelihood - b.log_likelihood).abs() < 1e-10);
            assert!((a.total() - b.total()).abs() < 1e-10);
        }
    }

    #[test]
    fn gfc_swap_with_negated_theta_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..20 {
            let data = random_data(Model::Gfc, seed);
            let layout = data.layout();
            let x = random_point(layout.dim(), &mut rng);
            let mut swapped = data.clone();
            for b in &mut swapped.blocks {
                std::mem::swap(&mut b.left, &mut b.right);
            }
            let mut y = x.clone();
            for v in &mut y[..layout.units * TRAITS] {
                *v = -*v;
            }
            assert_eq!(log_posterior(&data, &x).unwrap(), log_posterior(&swapped, &y).unwrap());
        }
    }

    #[test]
    fn permuting_rows_permutes_theta_gradient() {
        let data = random_data(Model::Grm, 2);
        let layout = data.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_point(layout.dim(), &mut rng);
        let order: Vec<usize> = (0..layout.units).rev().collect();
        let perm = data.permute_units(&order);
        let mut y = x.clone();
        for (new, &old) in order.iter().enumerate() {
            for t in 0..TRAITS {
                y[layout.theta(new, t)] = x[layout.theta(old, t)];
            }
        }
        let (gx, gy) = (grad_log_posterior(&data, &x).unwrap(), grad_log_posterior(&perm, &y).unwrap());
        assert!((log_posterior(&data, &x).unwrap() - log_posterior(&perm, &y).unwrap()).abs() < 1e-10);
        for (new, &old) in order.iter().enumerate() {
            for t in 0..TRAITS {
                assert_eq!(gy[layout.theta(new, t)], gx[layout.theta(old, t)]);
            }
        }
    }

    #[test]
    fn extreme_but_finite_parameters_keep_a_finite_density() {
        let data = random_data(Model::Gfc, 3);
        let layout = data.layout();
        let mut x = default_init(&data);
        for g in 0..layout.groups {
            let r = layout.raw(g);
            x[r.start] = 30.0;
            x[r.start + 2] = -120.0;
        }
        let mut g = vec![0.0; x.len()];
        assert!(log_posterior_grad(&data, &x, &mut g).unwrap().is_finite());
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn default_init_is_finite_and_ordered() {
        let data = random_data(Model::Gfc, 8);
        let x = default_init(&data);
        assert!(log_posterior(&data, &x).unwrap().is_finite());
    }
}

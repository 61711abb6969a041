//! Generative IRT respondent: draws ordinal answers from the same kernels the
//! estimator uses, with fake-good modelled as a latent shift `δ·g_t`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::inventory::{Condition, Format, Inventory, ItemPool, Keying, ResponseSet, TraitDomain};
use crate::ordinal::{self, OrdinalError, Thresholds};
use crate::persona::Persona;

pub use crate::ordinal::category_probs;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("no simulation parameters for item `{0}`")]
    MissingItem(String),
    #[error("no simulation parameters for block `{0}`")]
    MissingBlock(String),
    #[error("block `{0}` pairs two statements of the same trait")]
    SameTrait(String),
    #[error("fake-good shift must be finite")]
    BadDelta,
    #[error(transparent)]
    Ordinal(#[from] OrdinalError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Generating parameters of one statement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemParams {
    pub a_plus: f64,
    pub keying: Keying,
    pub domain: TraitDomain,
    /// Likert thresholds.
    pub kappa: Thresholds,
}

impl ItemParams {
    /// Signed discrimination `g_j a⁺_j`.
    pub fn signed_a(&self) -> f64 {
        self.keying.sign() * self.a_plus
    }

    /// Latent utility `μ_j = g_j a⁺_j θ_t`.
    pub fn mu(&self, theta: &[f64; 5]) -> f64 {
        self.signed_a() * theta[self.domain.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub kappa: Thresholds,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimParams {
    pub items: BTreeMap<String, ItemParams>,
    pub blocks: BTreeMap<String, BlockParams>,
}

/// How default parameters are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamOptions {
    /// Standard deviation of `ln a⁺` (mean 0).
    pub log_a_sd: f64,
    /// Base threshold grid before jitter; spans roughly [-2, 2].
    pub kappa_grid: Thresholds,
    pub kappa_jitter_sd: f64,
    /// Give both statements of every block the discrimination of the left one.
    pub match_block_discrimination: bool,
}

impl Default for ParamOptions {
    fn default() -> Self {
        ParamOptions {
            log_a_sd: 0.25,
            kappa_grid: [-2.0, -1.2, -0.4, 0.4, 1.2, 2.0],
            kappa_jitter_sd: 0.15,
            match_block_discrimination: false,
        }
    }
}

fn draw_thresholds(rng: &mut ChaCha8Rng, opts: &ParamOptions) -> Thresholds {
    let jitter = Normal::new(0.0, opts.kappa_jitter_sd.max(0.0)).expect("finite sd");
    let mut k = opts.kappa_grid;
    for v in k.iter_mut() {
        *v += jitter.sample(rng);
    }
    k.sort_by(f64::total_cmp);
    // keep strict ordering even if jitter produced a tie
    for j in 1..k.len() {
        if k[j] <= k[j - 1] {
            k[j] = k[j - 1] + 1e-3;
        }
    }
    k
}

impl SimParams {
    /// Default generating parameters for every statement and block of `inventory`.
    pub fn draw(inventory: &Inventory, pool: &ItemPool, seed: u64, opts: &ParamOptions) -> Result<Self, SimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let log_a = LogNormal::new(0.0, opts.log_a_sd.max(0.0)).expect("finite sd");
        let mut items = BTreeMap::new();
        for id in inventory.statements() {
            let it = pool.get(&id).ok_or_else(|| SimError::MissingItem(id.clone()))?;
            items.insert(
                id,
                ItemParams {
                    a_plus: log_a.sample(&mut rng),
                    keying: it.keying,
                    domain: it.domain,
                    kappa: draw_thresholds(&mut rng, opts),
                },
            );
        }
        let mut blocks = BTreeMap::new();
        for b in inventory.blocks() {
            blocks.insert(b.id.clone(), BlockParams { kappa: draw_thresholds(&mut rng, opts) });
            if opts.match_block_discrimination {
                let a = items[&b.left].a_plus;
                items.get_mut(&b.right).expect("statement params exist").a_plus = a;
            }
        }
        Ok(SimParams { items, blocks })
    }

    pub fn item(&self, id: &str) -> Result<&ItemParams, SimError> {
        self.items.get(id).ok_or_else(|| SimError::MissingItem(id.to_string()))
    }

    pub fn block(&self, id: &str) -> Result<&BlockParams, SimError> {
        self.blocks.get(id).ok_or_else(|| SimError::MissingBlock(id.to_string()))
    }
}

/// GRM linear predictor: `g · a⁺ · θ[trait]`.
pub fn likert_eta(theta: &[f64; 5], item: &ItemParams) -> f64 {
    item.mu(theta)
}

/// Scaled right-minus-left utility difference `(μ_R − μ_L) / √2`.
pub fn gfc_eta(theta: &[f64; 5], left: &ItemParams, right: &ItemParams) -> Result<f64, SimError> {
    if left.domain == right.domain {
        return Err(SimError::SameTrait(format!("{}-{}", left.domain, right.domain)));
    }
    Ok((right.mu(theta) - left.mu(theta)) / std::f64::consts::SQRT_2)
}

/// Persona scores seen by the generative model under a condition.
pub fn effective_theta(z: &[f64; 5], condition: Condition, delta: f64) -> [f64; 5] {
    let mut t = *z;
    if condition == Condition::FakeGood {
        for d in TraitDomain::ALL {
            t[d.index()] += delta * d.desirability_direction();
        }
    }
    t
}

/// Simulation controls. The seed fixes every draw; the condition does not enter
/// the random stream, so both conditions share their uniforms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub delta: f64,
    pub seed: u64,
}

/// Uniform for one (persona, format, unit) cell, identical across conditions.
pub fn unit_uniform(seed: u64, persona_id: &str, format: Format, unit_id: &str) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for part in [persona_id, format.as_str(), unit_id] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    let digest = h.finalize();
    let key = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    ChaCha8Rng::seed_from_u64(key).random::<f64>()
}

/// Canonical-orientation answer (1..7) for one unit.
pub fn simulate_unit(
    theta: &[f64; 5],
    inventory: &Inventory,
    params: &SimParams,
    format: Format,
    unit_id: &str,
    u: f64,
) -> Result<u8, SimError> {
    match format {
        Format::Likert => {
            let p = params.item(unit_id)?;
            ordinal::check_thresholds(&p.kappa)?;
            Ok(ordinal::draw_category(likert_eta(theta, p), &p.kappa, u))
        }
        Format::Gfc => {
            let b = inventory.block(unit_id).ok_or_else(|| SimError::MissingBlock(unit_id.to_string()))?;
            let eta = gfc_eta(theta, params.item(&b.left)?, params.item(&b.right)?)?;
            let bp = params.block(unit_id)?;
            ordinal::check_thresholds(&bp.kappa)?;
            Ok(ordinal::draw_category(eta, &bp.kappa, u))
        }
    }
}

/// Identity and display details of one simulated administration.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSession<'a> {
    pub respondent_id: &'a str,
    pub persona_id: &'a str,
    pub z: &'a [f64; 5],
    pub format: Format,
    pub condition: Condition,
    pub presentation_order: Vec<String>,
    pub side_assignment: BTreeMap<String, bool>,
}

pub fn simulate_response_set(
    session: &SimSession<'_>,
    inventory: &Inventory,
    params: &SimParams,
    spec: &SimSpec,
) -> Result<ResponseSet, SimError> {
    if !spec.delta.is_finite() {
        return Err(SimError::BadDelta);
    }
    let theta = effective_theta(session.z, session.condition, spec.delta);
    let mut answers = BTreeMap::new();
    for unit in inventory.unit_ids(session.format) {
        let u = unit_uniform(spec.seed, session.persona_id, session.format, &unit);
        let y = simulate_unit(&theta, inventory, params, session.format, &unit, u)?;
        answers.insert(unit, y);
    }
    let presentation_order = if session.presentation_order.is_empty() {
        inventory.unit_ids(session.format)
    } else {
        session.presentation_order.clone()
    };
    Ok(ResponseSet {
        respondent_id: session.respondent_id.to_string(),
        persona_id: session.persona_id.to_string(),
        format: session.format,
        condition: session.condition,
        answers,
        presentation_order,
        side_assignment: if session.format == Format::Gfc { session.side_assignment.clone() } else { BTreeMap::new() },
    })
}

/// Simulates one respondent answering as every persona under both
/// conditions in each requested format (canonical presentation).
pub fn simulate_study(
    respondent_id: &str,
    personas: &[Persona],
    formats: &[Format],
    inventory: &Inventory,
    params: &SimParams,
    spec: &SimSpec,
) -> Result<Vec<ResponseSet>, SimError> {
    let mut out = Vec::with_capacity(personas.len() * formats.len() * 2);
    for &format in formats {
        for condition in Condition::ALL {
            for p in personas {
                let session = SimSession {
                    respondent_id,
                    persona_id: &p.id,
                    z: &p.z,
                    format,
                    condition,
                    presentation_order: Vec::new(),
                    side_assignment: BTreeMap::new(),
                };
                out.push(simulate_response_set(&session, inventory, params, spec)?);
            }
        }
    }
    Ok(out)
}

/// Naive forced-choice count scores: each block awards one point to the trait of
/// the preferred statement (half a point each for "about the same"), so every
/// respondent's scores sum to the block count.
pub fn naive_gfc_scores(rs: &ResponseSet, inventory: &Inventory, pool: &ItemPool) -> Result<[f64; 5], SimError> {
    let mut s = [0.0; 5];
    for b in inventory.blocks() {
        let y = *rs.answers.get(&b.id).ok_or_else(|| SimError::MissingBlock(b.id.clone()))?;
        let dom = |id: &str| pool.get(id).map(|i| i.domain.index()).ok_or_else(|| SimError::MissingItem(id.to_string()));
        let (l, r) = (dom(&b.left)?, dom(&b.right)?);
        match y {
            1..=3 => s[l] += 1.0,
            5..=7 => s[r] += 1.0,
            _ => {
                s[l] += 0.5;
                s[r] += 0.5;
            }
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ip(domain: TraitDomain, keying: Keying, a: f64) -> ItemParams {
        ItemParams { a_plus: a, keying, domain, kappa: [-1.5, -0.9, -0.3, 0.3, 0.9, 1.5] }
    }

    #[test]
    fn likert_eta_arithmetic() {
        let it = ip(TraitDomain::C, Keying::Negative, 1.2);
        let mut th = [0.0; 5];
        assert_eq!(likert_eta(&th, &it), 0.0);
        th[TraitDomain::C.index()] = 0.5;
        assert!((likert_eta(&th, &it) + 0.6).abs() < 1e-15);
        let double = ItemParams { a_plus: 2.4, ..it.clone() };
        assert_eq!(likert_eta(&th, &double), 2.0 * likert_eta(&th, &it));
    }

    #[test]
    fn gfc_eta_scaling_and_antisymmetry() {
        let l = ip(TraitDomain::A, Keying::Positive, 1.0);
        let r = ip(TraitDomain::E, Keying::Positive, 1.0);
        let mut th = [0.0; 5];
        th[TraitDomain::E.index()] = 1.0;
        assert!((gfc_eta(&th, &l, &r).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(gfc_eta(&th, &r, &l).unwrap(), -gfc_eta(&th, &l, &r).unwrap());
        th[TraitDomain::A.index()] = 1.0;
        assert_eq!(gfc_eta(&th, &l, &r).unwrap(), 0.0);
        assert!(gfc_eta(&th, &l, &l).is_err());
    }

    #[test]
    fn fake_good_shift_follows_desirability_direction() {
        let t = effective_theta(&[0.0; 5], Condition::FakeGood, 1.0);
        assert_eq!(t, [1.0, 1.0, 1.0, -1.0, 1.0]);
        assert_eq!(effective_theta(&[0.3; 5], Condition::Honest, 1.0), [0.3; 5]);
    }

    #[test]
    fn matched_pair_shift_is_bounded() {
        // both statements desirable: shift on η is δ (a_R − a_L) / √2
        let l = ip(TraitDomain::A, Keying::Positive, 1.1);
        let r = ip(TraitDomain::N, Keying::Negative, 0.8);
        let z = [0.2, -0.1, 0.4, 0.3, -0.5];
        for delta in [0.5, 1.0, 2.0] {
            let h = gfc_eta(&effective_theta(&z, Condition::Honest, delta), &l, &r).unwrap();
            let f = gfc_eta(&effective_theta(&z, Condition::FakeGood, delta), &l, &r).unwrap();
            assert!((f - h).abs() <= (1.1f64 - 0.8).abs() * delta / 2f64.sqrt() + 1e-12);
        }
    }

    #[test]
    fn uniforms_ignore_condition_and_differ_by_unit() {
        let a = unit_uniform(1, "P001", Format::Likert, "A01");
        assert_eq!(a, unit_uniform(1, "P001", Format::Likert, "A01"));
        assert_ne!(a, unit_uniform(1, "P001", Format::Likert, "A02"));
        assert_ne!(a, unit_uniform(2, "P001", Format::Likert, "A01"));
        assert!((0.0..1.0).contains(&a));
    }
}

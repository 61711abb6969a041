//! Session planning and execution with format validation and retries.

use std::collections::BTreeMap;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::prompts::{render_gfc_prompt, render_likert_prompt};
use super::provider::{DecodeOptions, Provider, ProviderRequest, RequestContext};
use super::AdminError;
use crate::inventory::{Condition, Format, Inventory, ItemPool, ResponseSet};
use crate::persona::Persona;

/// Format refits allowed after the first attempt ("up to three additional times").
pub const MAX_RETRIES: usize = 3;

/// Why a reply was not a single integer in 1..7.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum AnswerError {
    #[error("empty reply")]
    Empty,
    #[error("reply is not exactly one integer: `{0}`")]
    ExtraText(String),
    #[error("integer {0} outside 1..7")]
    OutOfRange(String),
}

/// Accepts iff the trimmed text is exactly one integer in 1..7.
pub fn parse_single_int(text: &str) -> Result<u8, AnswerError> {
    let t = text.trim();
    if t.is_empty() {
        return Err(AnswerError::Empty);
    }
    let digits = t.strip_prefix(['-', '+']).unwrap_or(t);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(AnswerError::ExtraText(t.to_string()));
    }
    match t.parse::<i64>() {
        Ok(v) if (1..=7).contains(&v) => Ok(v as u8),
        _ => Err(AnswerError::OutOfRange(t.to_string())),
    }
}

/// One planned administration: a persona answering one format under one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub respondent_id: String,
    pub persona_id: String,
    pub persona_description: String,
    pub format: Format,
    pub condition: Condition,
    pub presentation_order: Vec<String>,
    /// GFC only: `true` displays the block's right statement on the left.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub side_assignment: BTreeMap<String, bool>,
    pub max_retries: usize,
}

impl SessionPlan {
    pub fn key(&self) -> SessionKey {
        SessionKey {
            respondent_id: self.respondent_id.clone(),
            persona_id: self.persona_id.clone(),
            format: self.format,
            condition: self.condition,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SessionKey {
    pub respondent_id: String,
    pub persona_id: String,
    pub format: Format,
    pub condition: Condition,
}

impl std::fmt::Display for SessionKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}/{}", self.respondent_id, self.persona_id, self.format, self.condition.as_str())
    }
}

fn presentation_rng(seed: u64, respondent: &str, persona: &str, format: Format) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for part in [respondent, persona, format.as_str()] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    let digest = h.finalize();
    ChaCha8Rng::from_seed(digest[..32].try_into().expect("32 bytes"))
}

/// Presentation order and GFC side assignment for one (respondent, persona,
/// format); the condition is deliberately not an input, so both conditions
/// see the same order and sides.
pub fn presentation(
    seed: u64,
    respondent: &str,
    persona: &str,
    format: Format,
    inventory: &Inventory,
) -> (Vec<String>, BTreeMap<String, bool>) {
    let mut rng = presentation_rng(seed, respondent, persona, format);
    let mut order = inventory.unit_ids(format);
    order.shuffle(&mut rng);
    let sides = match format {
        Format::Likert => BTreeMap::new(),
        Format::Gfc => inventory.blocks().iter().map(|b| (b.id.clone(), rng.random::<bool>())).collect(),
    };
    (order, sides)
}

/// Fully crossed plan: every persona × format × condition.
pub fn plan_sessions(
    respondent: &str,
    personas: &[Persona],
    formats: &[Format],
    conditions: &[Condition],
    inventory: &Inventory,
    seed: u64,
) -> Vec<SessionPlan> {
    let mut plans = Vec::with_capacity(personas.len() * formats.len() * conditions.len());
    for p in personas {
        for &format in formats {
            let (order, sides) = presentation(seed, respondent, &p.id, format, inventory);
            for &condition in conditions {
                plans.push(SessionPlan {
                    respondent_id: respondent.to_string(),
                    persona_id: p.id.clone(),
                    persona_description: p.description.clone(),
                    format,
                    condition,
                    presentation_order: order.clone(),
                    side_assignment: sides.clone(),
                    max_retries: MAX_RETRIES,
                });
            }
        }
    }
    plans
}

/// Transport-level retry policy, separate from format refits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub transport_retries: usize,
    pub backoff_initial_ms: u64,
    pub backoff_max_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { transport_retries: 5, backoff_initial_ms: 1000, backoff_max_ms: 60_000 }
    }
}

impl RetryPolicy {
    pub fn no_wait() -> Self {
        RetryPolicy { transport_retries: 5, backoff_initial_ms: 0, backoff_max_ms: 0 }
    }

    fn delay(&self, attempt: usize) -> Duration {
        let ms = self.backoff_initial_ms.saturating_mul(1u64 << attempt.min(20)).min(self.backoff_max_ms);
        Duration::from_millis(ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SessionStatus {
    Complete,
    /// A unit exhausted its attempts; the set is excluded from fitting.
    Incomplete { unit: String, reason: String },
    /// The provider refused the request outright.
    Failed { unit: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub key: SessionKey,
    pub status: SessionStatus,
    /// Format refits (re-submissions after a non-conforming reply).
    pub refits: usize,
    /// Re-submissions after transport failures.
    pub transport_retries: usize,
    pub requests: usize,
    /// Present only for complete sessions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub responses: Option<ResponseSet>,
}

impl SessionOutcome {
    pub fn is_complete(&self) -> bool {
        self.status == SessionStatus::Complete
    }
}

/// Prompt text and provider context for one unit as displayed.
pub fn unit_request(
    plan: &SessionPlan,
    unit: &str,
    inventory: &Inventory,
    pool: &ItemPool,
    decode: &DecodeOptions,
) -> Result<ProviderRequest, AdminError> {
    let (prompt, swapped) = match plan.format {
        Format::Likert => {
            let item = pool.require(unit)?;
            (render_likert_prompt(&plan.persona_description, plan.condition, &item.text)?, false)
        }
        Format::Gfc => {
            let block = inventory.block(unit).ok_or_else(|| AdminError::UnknownUnit(unit.to_string()))?;
            let swapped = plan.side_assignment.get(unit).copied().unwrap_or(false);
            let (l, r) = if swapped { (&block.right, &block.left) } else { (&block.left, &block.right) };
            let (l, r) = (&pool.require(l)?.text, &pool.require(r)?.text);
            (render_gfc_prompt(&plan.persona_description, plan.condition, l, r)?, swapped)
        }
    };
    Ok(ProviderRequest {
        prompt,
        decode: decode.clone(),
        context: RequestContext::Questionnaire {
            persona_id: plan.persona_id.clone(),
            format: plan.format,
            condition: plan.condition,
            unit_id: unit.to_string(),
            swapped,
        },
    })
}

/// Administers every unit in presentation order. Each unit gets one attempt
/// plus up to `max_retries` refits with the identical prompt; transport
/// failures are retried with exponential backoff and counted separately.
/// GFC answers are stored in canonical block orientation.
pub fn run_session(
    plan: &SessionPlan,
    inventory: &Inventory,
    pool: &ItemPool,
    provider: &dyn Provider,
    decode: &DecodeOptions,
    policy: &RetryPolicy,
) -> Result<SessionOutcome, AdminError> {
    let mut outcome = SessionOutcome {
        key: plan.key(),
        status: SessionStatus::Complete,
        refits: 0,
        transport_retries: 0,
        requests: 0,
        responses: None,
    };
    let mut answers = BTreeMap::new();
    'units: for unit in &plan.presentation_order {
        let request = unit_request(plan, unit, inventory, pool, decode)?;
        let mut last_problem = String::new();
        for attempt in 0..=plan.max_retries {
            if attempt > 0 {
                outcome.refits += 1;
            }
            let mut transport_failures = 0;
            let reply = loop {
                outcome.requests += 1;
                match provider.complete(&request) {
                    Ok(r) => break r,
                    Err(e) if e.is_transient() && transport_failures < policy.transport_retries => {
                        std::thread::sleep(policy.delay(transport_failures));
                        transport_failures += 1;
                        outcome.transport_retries += 1;
                        log::warn!("{}: {unit}: {e}; retrying", outcome.key);
                    }
                    Err(e) if e.is_transient() => {
                        outcome.status =
                            SessionStatus::Incomplete { unit: unit.clone(), reason: format!("transport: {e}") };
                        break 'units;
                    }
                    Err(e) => {
                        outcome.status = SessionStatus::Failed { unit: unit.clone(), reason: e.to_string() };
                        break 'units;
                    }
                }
            };
            match parse_single_int(&reply.text) {
                Ok(y) => {
                    let swapped = plan.side_assignment.get(unit).copied().unwrap_or(false);
                    answers.insert(unit.clone(), if swapped { 8 - y } else { y });
                    continue 'units;
                }
                Err(e) => {
                    log::debug!("{}: {unit}: rejected reply: {e}", outcome.key);
                    last_problem = e.to_string();
                }
            }
        }
        outcome.status = SessionStatus::Incomplete {
            unit: unit.clone(),
            reason: format!("{} attempts without a valid answer: {last_problem}", plan.max_retries + 1),
        };
        break;
    }
    if outcome.is_complete() {
        let set = ResponseSet {
            respondent_id: plan.respondent_id.clone(),
            persona_id: plan.persona_id.clone(),
            format: plan.format,
            condition: plan.condition,
            answers,
            presentation_order: plan.presentation_order.clone(),
            side_assignment: if plan.format == Format::Gfc { plan.side_assignment.clone() } else { BTreeMap::new() },
        };
        set.check_complete(inventory)?;
        outcome.responses = Some(set);
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_single_int_examples() {
        assert_eq!(parse_single_int(" 5\n"), Ok(5));
        assert_eq!(parse_single_int("1"), Ok(1));
        assert_eq!(parse_single_int("7"), Ok(7));
        assert!(matches!(parse_single_int("I'd say 5"), Err(AnswerError::ExtraText(_))));
        assert!(matches!(parse_single_int("5."), Err(AnswerError::ExtraText(_))));
        assert!(matches!(parse_single_int("5 6"), Err(AnswerError::ExtraText(_))));
        assert!(matches!(parse_single_int("8"), Err(AnswerError::OutOfRange(_))));
        assert!(matches!(parse_single_int("0"), Err(AnswerError::OutOfRange(_))));
        assert!(matches!(parse_single_int("-3"), Err(AnswerError::OutOfRange(_))));
        assert!(matches!(parse_single_int("99999999999999999999"), Err(AnswerError::OutOfRange(_))));
        assert_eq!(parse_single_int("  \n"), Err(AnswerError::Empty));
        assert_eq!(parse_single_int(""), Err(AnswerError::Empty));
    }

    #[test]
    fn backoff_grows_and_caps() {
        let p = RetryPolicy { transport_retries: 3, backoff_initial_ms: 100, backoff_max_ms: 350 };
        assert_eq!(p.delay(0), Duration::from_millis(100));
        assert_eq!(p.delay(1), Duration::from_millis(200));
        assert_eq!(p.delay(2), Duration::from_millis(350));
        assert_eq!(p.delay(60), Duration::from_millis(350));
    }
}

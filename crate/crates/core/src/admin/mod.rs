//! Questionnaire administration: prompt rendering, respondent providers,
//! validated sessions with retries and persisted response sets.

pub mod prompts;
pub mod provider;
pub mod runner;
pub mod session;

use thiserror::Error;

use crate::inventory::InventoryError;

pub use prompts::{
    render_gfc_prompt, render_likert_prompt, render_rating_prompt, render_rating_refit_prompt, FAKE_GOOD_INSTRUCTION,
    HONEST_INSTRUCTION,
};
pub use provider::{
    DecodeOptions, HttpConfig, HttpProvider, Provider, ProviderError, ProviderReply, ProviderRequest, RateLimiter,
    RequestContext, SimProvider,
};
pub use runner::{
    administer, build_rating_plan, collect_ratings, consolidate, run_to_dir, write_run, RatingPrompt, RatingQc,
    RunManifest, RunOptions, RunStore,
};
pub use session::{
    parse_single_int, plan_sessions, presentation, run_session, AnswerError, RetryPolicy, SessionKey, SessionOutcome,
    SessionPlan, SessionStatus, MAX_RETRIES,
};

#[derive(Debug, Error)]
pub enum AdminError {
    #[error("{0} is empty")]
    EmptyText(&'static str),
    #[error("unit `{0}` is not in the inventory")]
    UnknownUnit(String),
    #[error(transparent)]
    Inventory(#[from] InventoryError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;
    use std::time::Duration;

    use super::*;
    use crate::inventory::{Condition, Format, GfcBlock, Inventory, Item, ItemPool, Keying, TraitDomain};
    use crate::persona::{make_persona, Lexicon, Persona, PersonaSet, TraitCovariance};
    use crate::sim::{ParamOptions, SimParams, SimSpec};

    fn fixture() -> (ItemPool, Inventory, Vec<Persona>) {
        let domains = TraitDomain::ALL;
        let items: Vec<Item> = (0..10)
            .map(|i| Item {
                id: format!("S{i:02}"),
                text: format!("Statement number {i}."),
                domain: domains[i % 5],
                keying: if i % 3 == 0 { Keying::Negative } else { Keying::Positive },
                desirability: Some(3.0 + (i as f64) * 0.4),
            })
            .collect();
        let pool = ItemPool::new(items, vec![]).unwrap();
        let blocks = (0..5)
            .map(|b| GfcBlock::from_pool(crate::inventory::block_id(b), &format!("S{:02}", 2 * b), &format!("S{:02}", 2 * b + 1), &pool).unwrap())
            .collect();
        let lex = Lexicon::default();
        let personas = (0..3)
            .map(|i| make_persona(format!("P{i:03}"), [0.5 * i as f64 - 0.5, 0.2, -0.3, 1.0, 0.0], &lex).unwrap())
            .collect();
        (pool, Inventory::new(blocks), personas)
    }

    fn sim(pool: &ItemPool, inv: &Inventory, personas: &[Persona]) -> SimProvider {
        let set = PersonaSet { seed: 0, covariance: TraitCovariance::identity(), personas: personas.to_vec() };
        let params = SimParams::draw(inv, pool, 1, &ParamOptions::default()).unwrap();
        SimProvider::new("sim", &set, inv.clone(), pool, params, SimSpec { delta: 1.0, seed: 2 })
    }

    /// Replies from a script keyed by call number; falls back to "4".
    struct Scripted {
        calls: AtomicUsize,
        script: Mutex<BTreeMap<usize, Result<String, ProviderError>>>,
    }

    impl Scripted {
        fn new(script: Vec<(usize, Result<&str, ProviderError>)>) -> Self {
            Scripted {
                calls: AtomicUsize::new(0),
                script: Mutex::new(script.into_iter().map(|(k, v)| (k, v.map(str::to_string))).collect()),
            }
        }
    }

    impl Provider for Scripted {
        fn model_id(&self) -> &str {
            "scripted"
        }
        fn complete(&self, _: &ProviderRequest) -> Result<ProviderReply, ProviderError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            let text = self.script.lock().unwrap().remove(&n).unwrap_or(Ok("4".into()))?;
            Ok(ProviderReply { text, status: 200, latency: Duration::ZERO })
        }
    }

    #[test]
    fn simulator_session_is_complete_without_refits() {
        let (pool, inv, personas) = fixture();
        let provider = sim(&pool, &inv, &personas);
        for format in Format::ALL {
            let plans = plan_sessions("sim", &personas[..1], &[format], &[Condition::Honest], &inv, 3);
            let out = run_session(&plans[0], &inv, &pool, &provider, &DecodeOptions::new(), &RetryPolicy::no_wait()).unwrap();
            assert!(out.is_complete());
            assert_eq!(out.refits, 0);
            let set = out.responses.unwrap();
            assert_eq!(set.answers.len(), inv.unit_ids(format).len());
            set.check_complete(&inv).unwrap();
        }
    }

    #[test]
    fn swapped_sides_are_stored_canonically() {
        let (pool, inv, personas) = fixture();
        let provider = sim(&pool, &inv, &personas);
        let mut plan = plan_sessions("sim", &personas[..1], &[Format::Gfc], &[Condition::Honest], &inv, 3).remove(0);
        plan.side_assignment.values_mut().for_each(|v| *v = false);
        let straight = run_session(&plan, &inv, &pool, &provider, &DecodeOptions::new(), &RetryPolicy::no_wait()).unwrap();
        plan.side_assignment.values_mut().for_each(|v| *v = true);
        let swapped = run_session(&plan, &inv, &pool, &provider, &DecodeOptions::new(), &RetryPolicy::no_wait()).unwrap();
        assert_eq!(straight.responses.unwrap().answers, swapped.responses.unwrap().answers);
    }

    #[test]
    fn order_and_sides_are_shared_across_conditions() {
        let (_, inv, personas) = fixture();
        let plans = plan_sessions("m", &personas, &Format::ALL, &Condition::ALL, &inv, 9);
        assert_eq!(plans.len(), personas.len() * 4);
        for pair in plans.chunks(2) {
            assert_eq!(pair[0].condition, Condition::Honest);
            assert_eq!(pair[1].condition, Condition::FakeGood);
            assert_eq!(pair[0].presentation_order, pair[1].presentation_order);
            assert_eq!(pair[0].side_assignment, pair[1].side_assignment);
        }
        // different personas get different orders
        let likert: Vec<_> = plans.iter().filter(|p| p.format == Format::Likert).map(|p| &p.presentation_order).collect();
        assert!(likert.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn one_bad_reply_costs_one_refit() {
        let (pool, inv, personas) = fixture();
        let plan = plan_sessions("m", &personas[..1], &[Format::Likert], &[Condition::Honest], &inv, 0).remove(0);
        let p = Scripted::new(vec![(0, Ok("maybe"))]);
        let out = run_session(&plan, &inv, &pool, &p, &DecodeOptions::new(), &RetryPolicy::no_wait()).unwrap();
        assert!(out.is_complete());
        assert_eq!(out.refits, 1);
        assert_eq!(out.responses.unwrap().answers[&plan.presentation_order[0]], 4);
    }

    #[test]
    fn four_bad_replies_make_the_session_incomplete() {
        let (pool, inv, personas) = fixture();
        let plan = plan_sessions("m", &personas[..1], &[Format::Likert], &[Condition::Honest], &inv, 0).remove(0);
        let garbage = (0..4).map(|k| (k, Ok("garbage"))).collect();
        let p = Scripted::new(garbage);
        let out = run_session(&plan, &inv, &pool, &p, &DecodeOptions::new(), &RetryPolicy::no_wait()).unwrap();
        assert!(matches!(&out.status, SessionStatus::Incomplete { unit, .. } if *unit == plan.presentation_order[0]));
        assert_eq!(out.refits, 3);
        assert_eq!(out.requests, 4);
        assert!(out.responses.is_none());
        // three bad replies are still recoverable
        let p = Scripted::new((0..3).map(|k| (k, Ok("garbage"))).collect());
        assert!(run_session(&plan, &inv, &pool, &p, &DecodeOptions::new(), &RetryPolicy::no_wait()).unwrap().is_complete());
    }

    #[test]
    fn transport_failures_are_counted_separately() {
        let (pool, inv, personas) = fixture();
        let plan = plan_sessions("m", &personas[..1], &[Format::Likert], &[Condition::Honest], &inv, 0).remove(0);
        let t = || Err(ProviderError::Transport("reset".into()));
        let p = Scripted::new(vec![(0, t()), (1, t()), (2, Ok("x"))]);
        let out = run_session(&plan, &inv, &pool, &p, &DecodeOptions::new(), &RetryPolicy::no_wait()).unwrap();
        assert!(out.is_complete());
        assert_eq!(out.transport_retries, 2);
        assert_eq!(out.refits, 1);
        let p = Scripted::new(vec![(0, Err(ProviderError::Rejected { status: 401, body: String::new() }))]);
        let out = run_session(&plan, &inv, &pool, &p, &DecodeOptions::new(), &RetryPolicy::no_wait()).unwrap();
        assert!(matches!(out.status, SessionStatus::Failed { .. }));
        let policy = RetryPolicy { transport_retries: 1, ..RetryPolicy::no_wait() };
        let p = Scripted::new(vec![(0, t()), (1, t())]);
        let out = run_session(&plan, &inv, &pool, &p, &DecodeOptions::new(), &policy).unwrap();
        assert!(matches!(out.status, SessionStatus::Incomplete { .. }));
    }

    #[test]
    fn concurrent_runs_are_order_independent_and_resumable() {
        let (pool, inv, personas) = fixture();
        let provider = sim(&pool, &inv, &personas);
        let plans = plan_sessions("sim", &personas, &Format::ALL, &Condition::ALL, &inv, 4);
        let seeds: BTreeMap<String, u64> = [("presentation".to_string(), 4)].into();
        let serial = RunOptions { parallelism: 1, retry: RetryPolicy::no_wait(), ..RunOptions::default() };
        let parallel = RunOptions { parallelism: 8, ..serial.clone() };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let (s1, m1) = run_to_dir(d1.path(), &plans, &inv, &pool, &provider, &serial, seeds.clone()).unwrap();
        let (s2, m2) = run_to_dir(d2.path(), &plans, &inv, &pool, &provider, &parallel, seeds.clone()).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(m1.sessions, m2.sessions);
        assert_eq!(m1.run_id, m2.run_id);
        assert!(m1.accounts_for(&plans));
        assert_eq!((m1.planned, m1.complete), (12, 12));
        let read = |d: &std::path::Path| std::fs::read(d.join(runner::RESPONSES_FILE)).unwrap();
        assert_eq!(read(d1.path()), read(d2.path()));
        // resuming reuses every logged session without new requests
        let silent = Scripted::new((0..1000).map(|k| (k, Err(ProviderError::Rejected { status: 500, body: String::new() }))).collect());
        let store = RunStore::open(d1.path()).unwrap();
        let again = administer(&plans, &inv, &pool, &silent, &serial, Some(&store)).unwrap();
        assert_eq!(silent.calls.load(Ordering::SeqCst), 0);
        assert_eq!(again.iter().filter_map(|o| o.responses.clone()).count(), 12);
    }

    #[test]
    fn rating_plan_partitions_each_replication() {
        let (pool, _, _) = fixture();
        let raters = vec!["r1".to_string(), "r2".to_string()];
        let plan = build_rating_plan(&pool, &raters, 3, 4, 7).unwrap();
        // 10 items in blocks of 4 → 4/4/2
        assert_eq!(plan.len(), 2 * 3 * 3);
        let sizes: Vec<usize> = plan[..3].iter().map(|p| p.item_ids.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let mut covered: Vec<&String> = plan[..3].iter().flat_map(|p| &p.item_ids).collect();
        covered.sort();
        covered.dedup();
        assert_eq!(covered.len(), 10);
        assert_eq!(plan, build_rating_plan(&pool, &raters, 3, 4, 7).unwrap());
        assert_ne!(plan[0].item_ids, plan[3].item_ids);
    }

    #[test]
    fn ratings_refit_once_then_give_up() {
        let (pool, inv, personas) = fixture();
        let plan = build_rating_plan(&pool, &["sim".to_string()], 2, 5, 1).unwrap();
        let provider = sim(&pool, &inv, &personas);
        let (ratings, qc) = collect_ratings(&plan, &provider, &pool, &RetryPolicy::no_wait()).unwrap();
        assert_eq!(ratings.len(), 20);
        assert_eq!(qc.refits, 0);
        let p = Scripted::new(vec![(0, Ok("1 2")), (1, Ok("5 5 5 5 5")), (2, Ok("x")), (3, Ok("y"))]);
        let (ratings, qc) = collect_ratings(&plan[..2], &p, &pool, &RetryPolicy::no_wait()).unwrap();
        assert_eq!(ratings.len(), 5);
        assert_eq!(qc.refits, 2);
        assert_eq!(qc.failed, vec![(1, 2)]);
    }
}

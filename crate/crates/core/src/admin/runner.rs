//! Concurrent session execution, append-only persistence with a final
//! consolidation pass, run manifests and desirability rating plans.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::prompts::{render_rating_prompt, render_rating_refit_prompt};
use super::provider::{DecodeOptions, Provider, ProviderRequest, RequestContext};
use super::session::{run_session, RetryPolicy, SessionKey, SessionOutcome, SessionPlan, SessionStatus};
use super::AdminError;
use crate::desirability::{parse_block_rating_response, Rating};
use crate::inventory::{Inventory, ItemPool, ResponseSet};

pub const SESSIONS_LOG: &str = "sessions.jsonl";
pub const RESPONSES_FILE: &str = "responses.json";
pub const MANIFEST_FILE: &str = "manifest.json";

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Append-only session log in a run directory.
pub struct RunStore {
    dir: PathBuf,
    log: Mutex<File>,
}

impl RunStore {
    pub fn open(dir: &Path) -> Result<Self, AdminError> {
        std::fs::create_dir_all(dir)?;
        let log = OpenOptions::new().create(true).append(true).open(dir.join(SESSIONS_LOG))?;
        Ok(RunStore { dir: dir.to_path_buf(), log: Mutex::new(log) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn append(&self, outcome: &SessionOutcome) -> Result<(), AdminError> {
        let line = serde_json::to_string(outcome)?;
        let mut f = self.log.lock().expect("session log poisoned");
        writeln!(f, "{line}")?;
        f.flush()?;
        Ok(())
    }

    /// Logged outcomes, the latest entry per session winning. A truncated
    /// final line (interrupted write) is ignored.
    pub fn load(&self) -> Result<BTreeMap<SessionKey, SessionOutcome>, AdminError> {
        read_session_log(&self.dir.join(SESSIONS_LOG))
    }
}

pub fn read_session_log(path: &Path) -> Result<BTreeMap<SessionKey, SessionOutcome>, AdminError> {
    let mut out = BTreeMap::new();
    if !path.exists() {
        return Ok(out);
    }
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<SessionOutcome>(&line) {
            Ok(o) => {
                out.insert(o.key.clone(), o);
            }
            Err(e) => log::warn!("skipping unreadable session log line: {e}"),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(flatten)]
    pub key: SessionKey,
    #[serde(flatten)]
    pub status: SessionStatus,
    pub refits: usize,
    pub transport_retries: usize,
    pub requests: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub model_id: String,
    pub seeds: BTreeMap<String, u64>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub planned: usize,
    pub complete: usize,
    pub incomplete: usize,
    pub failed: usize,
    pub sessions: Vec<ManifestEntry>,
}

impl RunManifest {
    /// Every planned session has exactly one entry.
    pub fn accounts_for(&self, plans: &[SessionPlan]) -> bool {
        let mut keys: Vec<SessionKey> = plans.iter().map(SessionPlan::key).collect();
        keys.sort();
        let listed: Vec<SessionKey> = self.sessions.iter().map(|e| e.key.clone()).collect();
        keys == listed
    }
}

/// Deterministic identifier of a run from its model, seeds and plan.
pub fn run_id(model_id: &str, seeds: &BTreeMap<String, u64>, plans: &[SessionPlan]) -> String {
    let mut h = Sha256::new();
    h.update(model_id.as_bytes());
    for (k, v) in seeds {
        h.update(k.as_bytes());
        h.update(v.to_le_bytes());
    }
    for p in plans {
        h.update(p.key().to_string().as_bytes());
        for u in &p.presentation_order {
            h.update(u.as_bytes());
        }
    }
    let digest = h.finalize();
    format!("run-{}", digest[..6].iter().map(|b| format!("{b:02x}")).collect::<String>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunOptions {
    pub parallelism: usize,
    pub retry: RetryPolicy,
    pub decode: DecodeOptions,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { parallelism: 4, retry: RetryPolicy::default(), decode: DecodeOptions::new() }
    }
}

/// Runs all plans with bounded parallelism. With a store, completed sessions
/// already in its log are reused instead of re-administered and every new
/// outcome is appended as soon as it finishes. Results follow plan order.
pub fn administer(
    plans: &[SessionPlan],
    inventory: &Inventory,
    pool: &ItemPool,
    provider: &dyn Provider,
    opts: &RunOptions,
    store: Option<&RunStore>,
) -> Result<Vec<SessionOutcome>, AdminError> {
    let previous = match store {
        Some(s) => s.load()?,
        None => BTreeMap::new(),
    };
    let mut results: Vec<Option<SessionOutcome>> = plans
        .iter()
        .map(|p| previous.get(&p.key()).filter(|o| o.is_complete()).cloned())
        .collect();
    let todo: Vec<usize> = (0..plans.len()).filter(|&i| results[i].is_none()).collect();
    if !todo.is_empty() {
        log::info!("administering {} of {} sessions", todo.len(), plans.len());
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<(usize, Result<SessionOutcome, AdminError>)>> = Mutex::new(Vec::new());
    let workers = opts.parallelism.clamp(1, todo.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&i) = todo.get(k) else { break };
                let r = run_session(&plans[i], inventory, pool, provider, &opts.decode, &opts.retry);
                let r = match (r, store) {
                    (Ok(o), Some(s)) => s.append(&o).map(|_| o),
                    (r, _) => r,
                };
                slots.lock().expect("result slots poisoned").push((i, r));
            });
        }
    });
    for (i, r) in slots.into_inner().expect("result slots poisoned") {
        results[i] = Some(r?);
    }
    Ok(results.into_iter().map(|o| o.expect("every plan ran")).collect())
}

/// Complete response sets sorted by session key, plus the run manifest.
pub fn consolidate(
    plans: &[SessionPlan],
    outcomes: &[SessionOutcome],
    model_id: &str,
    seeds: BTreeMap<String, u64>,
    started_unix: u64,
) -> (Vec<ResponseSet>, RunManifest) {
    let mut sorted: Vec<&SessionOutcome> = outcomes.iter().collect();
    sorted.sort_by(|a, b| a.key.cmp(&b.key));
    let sets = sorted.iter().filter_map(|o| o.responses.clone()).collect();
    let sessions: Vec<ManifestEntry> = sorted
        .iter()
        .map(|o| ManifestEntry {
            key: o.key.clone(),
            status: o.status.clone(),
            refits: o.refits,
            transport_retries: o.transport_retries,
            requests: o.requests,
        })
        .collect();
    let count = |f: fn(&SessionStatus) -> bool| sessions.iter().filter(|e| f(&e.status)).count();
    let manifest = RunManifest {
        run_id: run_id(model_id, &seeds, plans),
        model_id: model_id.to_string(),
        seeds,
        started_unix,
        finished_unix: unix_now(),
        planned: plans.len(),
        complete: count(|s| matches!(s, SessionStatus::Complete)),
        incomplete: count(|s| matches!(s, SessionStatus::Incomplete { .. })),
        failed: count(|s| matches!(s, SessionStatus::Failed { .. })),
        sessions,
    };
    (sets, manifest)
}

/// Writes `responses.json` and `manifest.json` into the run directory.
pub fn write_run(dir: &Path, sets: &[ResponseSet], manifest: &RunManifest) -> Result<(), AdminError> {
    std::fs::create_dir_all(dir)?;
    let mut f = File::create(dir.join(RESPONSES_FILE))?;
    crate::inventory::write_response_sets(sets, &mut f)?;
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(manifest)? + "\n")?;
    Ok(())
}

/// Plans, runs and consolidates one respondent's sessions into `dir`.
pub fn run_to_dir(
    dir: &Path,
    plans: &[SessionPlan],
    inventory: &Inventory,
    pool: &ItemPool,
    provider: &dyn Provider,
    opts: &RunOptions,
    seeds: BTreeMap<String, u64>,
) -> Result<(Vec<ResponseSet>, RunManifest), AdminError> {
    let started = unix_now();
    let store = RunStore::open(dir)?;
    let outcomes = administer(plans, inventory, pool, provider, opts, Some(&store))?;
    let (sets, manifest) = consolidate(plans, &outcomes, provider.model_id(), seeds, started);
    write_run(dir, &sets, &manifest)?;
    Ok((sets, manifest))
}

/// One desirability rating request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingPrompt {
    pub rater: String,
    /// 1-based replication index.
    pub replication: u32,
    /// 1-based block index within the replication.
    pub block: usize,
    pub item_ids: Vec<String>,
    pub prompt: String,
}

/// For each rater and replication, a fresh permutation of the pool split into
/// consecutive blocks of `block_size` (the final block may be shorter).
pub fn build_rating_plan(
    pool: &ItemPool,
    raters: &[String],
    replications: u32,
    block_size: usize,
    seed: u64,
) -> Result<Vec<RatingPrompt>, AdminError> {
    if block_size == 0 {
        return Err(AdminError::EmptyText("rating block"));
    }
    let ids: Vec<&str> = pool.items().iter().map(|i| i.id.as_str()).collect();
    let mut out = Vec::new();
    for (l, rater) in raters.iter().enumerate() {
        for r in 1..=replications {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((l as u64) << 32 | u64::from(r));
            let mut perm = ids.clone();
            perm.shuffle(&mut rng);
            for (b, chunk) in perm.chunks(block_size).enumerate() {
                let texts: Vec<&str> = chunk.iter().map(|id| pool.get(id).expect("pool id").text.as_str()).collect();
                out.push(RatingPrompt {
                    rater: rater.clone(),
                    replication: r,
                    block: b + 1,
                    item_ids: chunk.iter().map(|s| s.to_string()).collect(),
                    prompt: render_rating_prompt(&texts)?,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RatingQc {
    pub prompts: usize,
    pub refits: usize,
    /// Prompts still non-conforming after the refit; their items stay unrated.
    pub failed: Vec<(u32, usize)>,
}

/// Sends rating prompts (all for the provider's rater) and aligns the replies
/// to item ids by position. A non-conforming reply is re-issued once with the
/// reminder prefix.
pub fn collect_ratings(
    prompts: &[RatingPrompt],
    provider: &dyn Provider,
    pool: &ItemPool,
    policy: &RetryPolicy,
) -> Result<(Vec<Rating>, RatingQc), AdminError> {
    let mut ratings = Vec::new();
    let mut qc = RatingQc { prompts: prompts.len(), ..RatingQc::default() };
    for p in prompts {
        let context = RequestContext::Rating { item_ids: p.item_ids.clone(), replication: p.replication };
        let mut request = ProviderRequest { prompt: p.prompt.clone(), decode: DecodeOptions::new(), context };
        let mut parsed = None;
        for attempt in 0..2 {
            if attempt == 1 {
                qc.refits += 1;
                let texts: Vec<&str> = p.item_ids.iter().map(|id| pool.require(id).map(|i| i.text.as_str())).collect::<Result<_, _>>()?;
                request.prompt = render_rating_refit_prompt(&texts)?;
            }
            let mut tries = 0;
            let reply = loop {
                match provider.complete(&request) {
                    Ok(r) => break r,
                    Err(e) if e.is_transient() && tries < policy.transport_retries => tries += 1,
                    Err(e) => return Err(e.into()),
                }
            };
            match parse_block_rating_response(&reply.text, p.item_ids.len()) {
                Ok(v) => {
                    parsed = Some(v);
                    break;
                }
                Err(e) => log::debug!("rating prompt {}/{}: {e}", p.replication, p.block),
            }
        }
        match parsed {
            Some(values) => {
                for (id, value) in p.item_ids.iter().zip(values) {
                    ratings.push(Rating { item: id.clone(), rater: p.rater.clone(), replication: p.replication, value });
                }
            }
            None => qc.failed.push((p.replication, p.block)),
        }
    }
    Ok((ratings, qc))
}

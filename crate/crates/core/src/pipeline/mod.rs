//! End-to-end orchestration: rate → aggregate → assemble → personas →
//! administer → fit → report, with a content-hashed pipeline manifest and a
//! referential-completeness lint.
//!
//! Every stage reads its inputs from and writes its outputs to the paths of a
//! [`LoadedConfig`]. A stage whose outputs already exist is skipped unless
//! `force` is set, so an interrupted pipeline resumes where it stopped and
//! deleting `reports/` regenerates identical reports from existing fits.

pub mod config;
pub mod plots;
pub mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{
    apply_override, sha256_hex, LoadedConfig, PipelineConfig, ProviderSettings, RespondentConfig, ResolvedPaths,
    Seeds, SimSettings,
};
pub use plots::{emit_plots, heatmap_svg, tradeoff_svg, HEATMAP_SVG, TRADEOFF_SVG};
pub use report::{build_report, write_report, FitSource, ReportBundle};

use crate::admin::{
    build_rating_plan, collect_ratings, plan_sessions, run_to_dir, HttpProvider, Provider, RunManifest, RunOptions,
    SimProvider,
};
use crate::assembly::assemble_pool;
use crate::desirability::{agreement_stats, aggregate_ratings, read_ratings, write_ratings, DesirabilityTable, RatingDataset};
use crate::inventory::{
    load_exclusions, load_inventory, load_item_pool, read_response_sets, write_inventory, Format, Inventory, ItemPool,
    ResponseSet,
};
use crate::irt::{fit_hmc, fit_map, FitArtifact, FitBackend, HmcOptions, MapOptions, ModelData};
use crate::persona::{default_covariance, sample_personas, Lexicon, PersonaSet, TraitCovariance};
use crate::sim::{ParamOptions, SimParams, SimSpec};

pub const RATING_PLAN_FILE: &str = "rating_plan.jsonl";
pub const RATING_QC_FILE: &str = "rating_qc.json";
pub const AGREEMENT_FILE: &str = "desirability_agreement.json";
pub const CONSTRAINTS_FILE: &str = "inventory_constraints.txt";
pub const FIT_INDEX_FILE: &str = "index.json";
const SPLIT_HALF_SPLITS: usize = 200;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("diagnostics gate failed: {0}")]
    Diagnostics(String),
}

impl PipelineError {
    /// Process exit status: 2 config, 3 stage failure, 4 diagnostics gate.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Stage { .. } => 3,
            PipelineError::Diagnostics(_) => 4,
        }
    }
}

fn stage_err(stage: &'static str) -> impl Fn(&dyn std::fmt::Display) -> PipelineError {
    move |e| PipelineError::Stage { stage, message: e.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Rate,
    Aggregate,
    Assemble,
    Personas,
    Administer,
    Fit,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] =
        [Stage::Rate, Stage::Aggregate, Stage::Assemble, Stage::Personas, Stage::Administer, Stage::Fit, Stage::Report];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Rate => "rate-plan",
            Stage::Aggregate => "aggregate",
            Stage::Assemble => "assemble",
            Stage::Personas => "personas",
            Stage::Administer => "administer",
            Stage::Fit => "fit",
            Stage::Report => "report",
        }
    }
}

/// Outputs of one stage with their content hashes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub outputs: BTreeMap<String, String>,
    pub skipped: bool,
}

/// Versions, seeds, config hash and per-stage output hashes. Contains no
/// timestamps, so identical runs produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub seeds: Seeds,
    pub stages: BTreeMap<String, StageRecord>,
}

/// Outcome of one stage call.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub stage: Stage,
    pub skipped: bool,
    pub outputs: Vec<PathBuf>,
}

pub struct Pipeline {
    pub cfg: LoadedConfig,
    /// Re-run stages even when their outputs exist.
    pub force: bool,
}

fn read_file(stage: &'static str, path: &Path) -> Result<File, PipelineError> {
    File::open(path).map_err(|e| PipelineError::Stage { stage, message: format!("{}: {e}", path.display()) })
}

fn create_file(stage: &'static str, path: &Path) -> Result<File, PipelineError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::Stage { stage, message: format!("{}: {e}", dir.display()) })?;
    }
    File::create(path).map_err(|e| PipelineError::Stage { stage, message: format!("{}: {e}", path.display()) })
}

fn write_text(stage: &'static str, path: &Path, text: &str) -> Result<(), PipelineError> {
    use std::io::Write;
    create_file(stage, path)?
        .write_all(text.as_bytes())
        .map_err(|e| PipelineError::Stage { stage, message: format!("{}: {e}", path.display()) })
}

pub fn file_sha256(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Mixes a respondent id into a base seed so respondents get distinct streams.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    use sha2::Digest;
    let d = sha2::Sha256::digest(label.as_bytes());
    base ^ u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn fit_path(fits: &Path, respondent: &str, format: Format) -> PathBuf {
    fits.join(respondent).join(format!("{}.json", format.as_str()))
}

impl Pipeline {
    pub fn new(cfg: LoadedConfig, force: bool) -> Self {
        Pipeline { cfg, force }
    }

    fn paths(&self) -> &ResolvedPaths {
        &self.cfg.paths
    }

    fn relative(&self, p: &Path) -> String {
        p.strip_prefix(&self.paths().work).unwrap_or(p).to_string_lossy().replace('\\', "/")
    }

    // ----- manifest -------------------------------------------------------

    pub fn read_manifest(&self) -> Option<PipelineManifest> {
        let text = std::fs::read_to_string(&self.paths().manifest).ok()?;
        serde_json::from_str(&text).ok()
    }

    fn record(&self, outcome: &StageOutcome) -> Result<(), PipelineError> {
        let mut m = self.read_manifest().unwrap_or_else(|| PipelineManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: self.cfg.config_hash.clone(),
            seeds: self.cfg.config.seeds.clone(),
            stages: BTreeMap::new(),
        });
        m.tool_version = env!("CARGO_PKG_VERSION").to_string();
        m.config_hash = self.cfg.config_hash.clone();
        m.seeds = self.cfg.config.seeds.clone();
        let mut rec = StageRecord { outputs: BTreeMap::new(), skipped: outcome.skipped };
        for p in &outcome.outputs {
            if p.is_file() {
                let h = file_sha256(p).map_err(|e| stage_err("manifest")(&e))?;
                rec.outputs.insert(self.relative(p), h);
            }
        }
        m.stages.insert(outcome.stage.as_str().to_string(), rec);
        let text = serde_json::to_string_pretty(&m).map_err(|e| stage_err("manifest")(&e))? + "\n";
        write_text("manifest", &self.paths().manifest, &text)
    }

    // ----- shared inputs --------------------------------------------------

    fn exclusions(&self, stage: &'static str) -> Result<Vec<String>, PipelineError> {
        let mut ex = self.cfg.config.assembly.exclude.clone();
        if let Some(p) = &self.paths().exclusions {
            ex.extend(load_exclusions(read_file(stage, p)?).map_err(|e| stage_err(stage)(&e))?);
        }
        Ok(ex)
    }

    /// The item pool minus exclusions, as given on disk.
    pub fn base_pool(&self, stage: &'static str) -> Result<ItemPool, PipelineError> {
        let ex = self.exclusions(stage)?;
        load_item_pool(read_file(stage, &self.paths().pool)?, &ex).map_err(|e| stage_err(stage)(&e))
    }

    /// The pool with aggregated desirability applied when the aggregate stage has run.
    pub fn rated_pool(&self, stage: &'static str) -> Result<ItemPool, PipelineError> {
        let pool = self.base_pool(stage)?;
        let d = &self.paths().desirability;
        if !d.is_file() {
            return Ok(pool);
        }
        let table = DesirabilityTable::read_tsv(read_file(stage, d)?).map_err(|e| stage_err(stage)(&e))?;
        pool.with_desirability(&table.to_map()).map_err(|e| stage_err(stage)(&e))
    }

    pub fn inventory(&self, stage: &'static str, pool: &ItemPool) -> Result<Inventory, PipelineError> {
        load_inventory(read_file(stage, &self.paths().inventory)?, pool).map_err(|e| stage_err(stage)(&e))
    }

    pub fn personas(&self, stage: &'static str) -> Result<PersonaSet, PipelineError> {
        let p = &self.paths().personas;
        let text = std::fs::read_to_string(p).map_err(|e| PipelineError::Stage { stage, message: format!("{}: {e}", p.display()) })?;
        PersonaSet::from_json(&text).map_err(|e| stage_err(stage)(&e))
    }

    fn sim_params(&self, id: &str, s: &SimSettings, inventory: &Inventory, pool: &ItemPool) -> Result<(SimParams, SimSpec), PipelineError> {
        let seed = derive_seed(self.cfg.config.seeds.simulation, id);
        let opts = ParamOptions { match_block_discrimination: s.match_discrimination, ..ParamOptions::default() };
        let params = SimParams::draw(inventory, pool, seed, &opts).map_err(|e| stage_err("administer")(&e))?;
        Ok((params, SimSpec { delta: s.delta, seed: seed.wrapping_add(1) }))
    }

    /// Builds the provider for one respondent. `personas`/`inventory` may be
    /// empty for rating-only use.
    pub fn provider(
        &self,
        r: &RespondentConfig,
        personas: &PersonaSet,
        inventory: &Inventory,
        pool: &ItemPool,
    ) -> Result<Box<dyn Provider>, PipelineError> {
        match &r.provider {
            ProviderSettings::Sim(s) => {
                let (params, spec) = self.sim_params(&r.id, s, inventory, pool)?;
                let p = SimProvider::new(r.id.clone(), personas, inventory.clone(), pool, params, spec)
                    .with_rating_noise(s.rating_noise_sd);
                Ok(Box::new(p))
            }
            ProviderSettings::Http(h) => {
                let p = HttpProvider::new(h.clone()).map_err(|e| PipelineError::Config(format!("respondent `{}`: {e}", r.id)))?;
                Ok(Box::new(p))
            }
        }
    }

    fn done(&self, outputs: &[&Path]) -> bool {
        !self.force && outputs.iter().all(|p| p.exists())
    }

    fn finish(&self, stage: Stage, skipped: bool, outputs: Vec<PathBuf>) -> Result<StageOutcome, PipelineError> {
        let outcome = StageOutcome { stage, skipped, outputs };
        self.record(&outcome)?;
        if skipped {
            info!("{}: outputs present, skipped", stage.as_str());
        } else {
            info!("{}: done", stage.as_str());
        }
        Ok(outcome)
    }

    // ----- stages ---------------------------------------------------------

    /// Writes the desirability rating plan and, with `rating.collect`, gathers
    /// the ratings from every rater into `paths.ratings`.
    pub fn rate_plan(&self) -> Result<StageOutcome, PipelineError> {
        const S: &str = "rate-plan";
        let plan_path = self.paths().runs.join(RATING_PLAN_FILE);
        let collect = self.cfg.config.rating.collect;
        let ratings_path = self.paths().ratings.clone();
        let mut outputs = vec![plan_path.clone()];
        if collect {
            outputs.push(ratings_path.clone().expect("validated"));
            outputs.push(self.paths().runs.join(RATING_QC_FILE));
        }
        let out_refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
        if self.done(&out_refs) {
            return self.finish(Stage::Rate, true, outputs);
        }
        let pool = self.base_pool(S)?;
        let raters = self.cfg.rater_ids();
        let r = &self.cfg.config.rating;
        let plan = build_rating_plan(&pool, &raters, r.replications, r.block_size, self.cfg.config.seeds.rating)
            .map_err(|e| stage_err(S)(&e))?;
        let mut text = String::new();
        for p in &plan {
            text.push_str(&serde_json::to_string(p).map_err(|e| stage_err(S)(&e))?);
            text.push('\n');
        }
        write_text(S, &plan_path, &text)?;

        if collect {
            let empty_personas = PersonaSet { seed: 0, covariance: default_covariance(), personas: Vec::new() };
            let empty_inventory = Inventory::new(Vec::new());
            let mut ds = RatingDataset::with_items(pool.items().iter().map(|i| i.id.clone()));
            let mut qc = BTreeMap::new();
            for rater in &raters {
                let rc = self.cfg.respondent(rater).expect("validated rater");
                let provider = self.provider(rc, &empty_personas, &empty_inventory, &pool)?;
                let prompts: Vec<_> = plan.iter().filter(|p| &p.rater == rater).cloned().collect();
                let (ratings, q) = collect_ratings(&prompts, provider.as_ref(), &pool, &self.cfg.config.administration.retry)
                    .map_err(|e| stage_err(S)(&e))?;
                for rating in ratings {
                    ds.insert(rating).map_err(|e| stage_err(S)(&e))?;
                }
                qc.insert(rater.clone(), q);
            }
            let mut f = create_file(S, ratings_path.as_deref().expect("validated"))?;
            write_ratings(&ds, &mut f).map_err(|e| stage_err(S)(&e))?;
            let qc_text = serde_json::to_string_pretty(&qc).map_err(|e| stage_err(S)(&e))? + "\n";
            write_text(S, &self.paths().runs.join(RATING_QC_FILE), &qc_text)?;
        }
        self.finish(Stage::Rate, false, outputs)
    }

    /// Averages raw ratings into per-item desirability and writes agreement
    /// statistics per rater. Without a ratings file the pool's own values are used.
    pub fn aggregate(&self) -> Result<StageOutcome, PipelineError> {
        const S: &str = "aggregate";
        let Some(ratings) = self.paths().ratings.clone() else {
            info!("aggregate: no ratings configured; using pool desirability");
            return self.finish(Stage::Aggregate, true, Vec::new());
        };
        let out = self.paths().desirability.clone();
        let agreement = out.with_file_name(AGREEMENT_FILE);
        if self.done(&[&out, &agreement]) {
            return self.finish(Stage::Aggregate, true, vec![out, agreement]);
        }
        let ds = read_ratings(read_file(S, &ratings)?).map_err(|e| stage_err(S)(&e))?;
        let table = aggregate_ratings(&ds).map_err(|e| stage_err(S)(&e))?;
        let mut f = create_file(S, &out)?;
        table.write_tsv(&mut f).map_err(|e| stage_err(S)(&e))?;
        let mut stats = BTreeMap::new();
        for rater in ds.raters() {
            match agreement_stats(&ds, &rater, SPLIT_HALF_SPLITS, self.cfg.config.seeds.rating) {
                Ok(a) => {
                    stats.insert(rater, serde_json::to_value(a).map_err(|e| stage_err(S)(&e))?);
                }
                Err(e) => {
                    warn!("aggregate: agreement for rater `{rater}` undefined: {e}");
                    stats.insert(rater, serde_json::json!({ "error": e.to_string() }));
                }
            }
        }
        let text = serde_json::to_string_pretty(&stats).map_err(|e| stage_err(S)(&e))? + "\n";
        write_text(S, &agreement, &text)?;
        self.finish(Stage::Aggregate, false, vec![out, agreement])
    }

    /// Assembles the desirability-matched inventory and writes its constraint report.
    pub fn assemble(&self) -> Result<StageOutcome, PipelineError> {
        const S: &str = "assemble";
        let out = self.paths().inventory.clone();
        let constraints = out.with_file_name(CONSTRAINTS_FILE);
        if self.done(&[&out]) {
            return self.finish(Stage::Assemble, true, vec![out, constraints]);
        }
        let pool = self.rated_pool(S)?;
        let (sol, report) = assemble_pool(&pool, &self.cfg.assembly).map_err(|e| stage_err(S)(&e))?;
        write_text(S, &constraints, &report.to_table())?;
        if !report.all_passed() {
            let failed: Vec<String> = report.failed().map(|c| format!("{c:?}")).collect();
            return Err(PipelineError::Stage { stage: S, message: format!("assembled inventory violates: {}", failed.join("; ")) });
        }
        let mut f = create_file(S, &out)?;
        write_inventory(&sol.inventory, &mut f).map_err(|e| stage_err(S)(&e))?;
        info!("assemble: {} blocks, max gap {:.4}, sse {:.4}", sol.inventory.block_count(), sol.max_gap, sol.sse);
        self.finish(Stage::Assemble, false, vec![out, constraints])
    }

    /// Samples the persona set.
    pub fn personas_stage(&self) -> Result<StageOutcome, PipelineError> {
        const S: &str = "personas";
        let out = self.paths().personas.clone();
        if self.done(&[&out]) {
            return self.finish(Stage::Personas, true, vec![out]);
        }
        let lexicon = match &self.paths().lexicon {
            Some(p) => Lexicon::from_toml(&std::fs::read_to_string(p).map_err(|e| stage_err(S)(&e))?).map_err(|e| stage_err(S)(&e))?,
            None => Lexicon::default(),
        };
        let cov = match &self.paths().covariance {
            Some(p) => TraitCovariance::from_toml(&std::fs::read_to_string(p).map_err(|e| stage_err(S)(&e))?)
                .map_err(|e| stage_err(S)(&e))?,
            None => default_covariance(),
        };
        let set = sample_personas(self.cfg.config.personas.count, &cov, self.cfg.config.seeds.personas, &lexicon)
            .map_err(|e| stage_err(S)(&e))?;
        write_text(S, &out, &(set.to_json().map_err(|e| stage_err(S)(&e))? + "\n"))?;
        self.finish(Stage::Personas, false, vec![out])
    }

    fn run_dir(&self, respondent: &str) -> PathBuf {
        self.paths().runs.join(respondent)
    }

    /// Administers every (persona × format × condition) session per respondent.
    /// Session logs make interrupted runs resumable; sessions that fail after
    /// all retries fail the stage once every respondent has been attempted.
    pub fn administer(&self) -> Result<StageOutcome, PipelineError> {
        const S: &str = "administer";
        let pool = self.rated_pool(S)?;
        let inventory = self.inventory(S, &pool)?;
        let personas = self.personas(S)?;
        let c = &self.cfg.config;
        let mut outputs = Vec::new();
        let mut all_skipped = true;
        let mut failures = Vec::new();
        for r in &c.respondents {
            let dir = self.run_dir(&r.id);
            let responses = dir.join(crate::admin::runner::RESPONSES_FILE);
            let manifest = dir.join(crate::admin::runner::MANIFEST_FILE);
            outputs.push(responses.clone());
            outputs.push(manifest.clone());
            let plans = plan_sessions(&r.id, &personas.personas, &c.design.formats, &c.design.conditions, &inventory, c.seeds.presentation);
            if self.done(&[&responses, &manifest]) {
                let m: RunManifest = serde_json::from_str(&std::fs::read_to_string(&manifest).map_err(|e| stage_err(S)(&e))?)
                    .map_err(|e| stage_err(S)(&e))?;
                if m.accounts_for(&plans) && m.failed == 0 {
                    continue;
                }
            }
            all_skipped = false;
            let provider = self.provider(r, &personas, &inventory, &pool)?;
            let opts = RunOptions { parallelism: c.administration.parallelism, retry: c.administration.retry.clone(), decode: Default::default() };
            let seeds = BTreeMap::from([
                ("presentation".to_string(), c.seeds.presentation),
                ("simulation".to_string(), derive_seed(c.seeds.simulation, &r.id)),
            ]);
            let (_, m) = run_to_dir(&dir, &plans, &inventory, &pool, provider.as_ref(), &opts, seeds).map_err(|e| stage_err(S)(&e))?;
            info!("administer: {}: {}/{} complete, {} incomplete, {} failed", r.id, m.complete, m.planned, m.incomplete, m.failed);
            if m.incomplete > 0 {
                warn!("administer: {}: {} sessions exhausted their refits and are excluded from fitting", r.id, m.incomplete);
            }
            if m.failed > 0 {
                failures.push(format!("{}: {} sessions failed", r.id, m.failed));
            }
        }
        if !failures.is_empty() {
            return Err(PipelineError::Stage { stage: S, message: format!("{}; rerun to resume", failures.join("; ")) });
        }
        self.finish(Stage::Administer, all_skipped, outputs)
    }

    /// Fits one dataset with the configured backend and seeds.
    pub fn fit_data(&self, data: &ModelData) -> Result<FitArtifact, PipelineError> {
        let f = &self.cfg.config.fit;
        let map = MapOptions { starts: f.map_starts, seed: self.cfg.config.seeds.fit, ..MapOptions::default() };
        match f.backend {
            FitBackend::Map => {
                let fit = fit_map(data, &map).map_err(|e| stage_err("fit")(&e))?;
                Ok(FitArtifact::from_map(data, &fit))
            }
            FitBackend::Hmc => {
                let opts = HmcOptions { chains: f.chains, warmup: f.warmup, draws: f.draws, seed: self.cfg.config.seeds.fit, map, ..HmcOptions::default() };
                let post = fit_hmc(data, &opts).map_err(|e| stage_err("fit")(&e))?;
                Ok(FitArtifact::from_posterior(data, &post))
            }
        }
    }

    /// Reads one respondent's consolidated responses.
    pub fn responses(&self, respondent: &str) -> Result<Vec<ResponseSet>, PipelineError> {
        let path = self.run_dir(respondent).join(crate::admin::runner::RESPONSES_FILE);
        read_response_sets(read_file("fit", &path)?).map_err(|e| stage_err("fit")(&e))
    }

    /// Fits one model per (respondent, format) and writes the fit index. HMC
    /// fits failing the R̂/divergence gate are kept on disk but fail the stage
    /// with a diagnostics error.
    pub fn fit(&self) -> Result<StageOutcome, PipelineError> {
        const S: &str = "fit";
        let pool = self.rated_pool(S)?;
        let inventory = self.inventory(S, &pool)?;
        let c = &self.cfg.config;
        let fits = &self.paths().fits;
        let mut index = Vec::new();
        let mut outputs = Vec::new();
        let mut all_skipped = true;
        let mut gate = Vec::new();
        for r in &c.respondents {
            let sets = self.responses(&r.id)?;
            for &format in &c.design.formats {
                let path = fit_path(fits, &r.id, format);
                let artifact = if self.done(&[&path]) {
                    FitArtifact::read_json(&path).map_err(|e| stage_err(S)(&e))?
                } else {
                    all_skipped = false;
                    let chosen: Vec<ResponseSet> = sets.iter().filter(|s| s.format == format).cloned().collect();
                    let data = ModelData::from_response_sets(format, &chosen, &inventory, &pool).map_err(|e| stage_err(S)(&e))?;
                    info!("fit: {} / {}: {} units ({} incomplete excluded)", r.id, format, data.units().len(), data.excluded());
                    let a = self.fit_data(&data)?;
                    std::fs::create_dir_all(path.parent().expect("fit dir")).map_err(|e| stage_err(S)(&e))?;
                    a.write_json(&path).map_err(|e| stage_err(S)(&e))?;
                    a
                };
                if !artifact.diagnostics_passed() {
                    gate.push(format!("{} / {}", r.id, format));
                }
                let sha256 = file_sha256(&path).map_err(|e| stage_err(S)(&e))?;
                let rel = path.strip_prefix(fits).unwrap_or(&path).to_string_lossy().replace('\\', "/");
                index.push(FitSource { respondent_id: r.id.clone(), format, path: rel, sha256 });
                outputs.push(path);
            }
        }
        index.sort();
        let index_path = fits.join(FIT_INDEX_FILE);
        write_text(S, &index_path, &(serde_json::to_string_pretty(&index).map_err(|e| stage_err(S)(&e))? + "\n"))?;
        outputs.push(index_path);
        self.finish(Stage::Fit, all_skipped, outputs)?;
        if !gate.is_empty() {
            return Err(PipelineError::Diagnostics(format!("R̂/divergence gate failed for {}", gate.join(", "))));
        }
        Ok(StageOutcome { stage: Stage::Fit, skipped: all_skipped, outputs: Vec::new() })
    }

    /// Reads the fit index and every indexed artifact, checking content hashes.
    pub fn indexed_fits(&self, stage: &'static str) -> Result<Vec<(FitSource, FitArtifact)>, PipelineError> {
        let fits = &self.paths().fits;
        let index_path = fits.join(FIT_INDEX_FILE);
        let text = std::fs::read_to_string(&index_path)
            .map_err(|e| PipelineError::Stage { stage, message: format!("{}: {e}", index_path.display()) })?;
        let index: Vec<FitSource> = serde_json::from_str(&text).map_err(|e| stage_err(stage)(&e))?;
        let mut out = Vec::with_capacity(index.len());
        for src in index {
            let path = fits.join(&src.path);
            let h = file_sha256(&path).map_err(|e| PipelineError::Stage { stage, message: format!("{}: {e}", path.display()) })?;
            if h != src.sha256 {
                return Err(PipelineError::Stage { stage, message: format!("{} changed since it was indexed", src.path) });
            }
            let a = FitArtifact::read_json(&path).map_err(|e| stage_err(stage)(&e))?;
            out.push((src, a));
        }
        Ok(out)
    }

    /// Computes report tables and plots from the indexed fits. Always
    /// regenerated; output is a pure function of the fits and personas.
    pub fn report(&self) -> Result<StageOutcome, PipelineError> {
        const S: &str = "report";
        let fits = self.indexed_fits(S)?;
        let personas = self.personas(S)?;
        let bundle = build_report(&fits, &personas)?;
        let dir = &self.paths().reports;
        // Render plots before writing anything so an empty report leaves no files.
        let heat = heatmap_svg(&bundle)?;
        let trade = tradeoff_svg(&bundle)?;
        let names = write_report(&bundle, dir)?;
        write_text(S, &dir.join(HEATMAP_SVG), &heat)?;
        write_text(S, &dir.join(TRADEOFF_SVG), &trade)?;
        let mut outputs: Vec<PathBuf> = names.iter().map(|n| dir.join(n)).collect();
        outputs.push(dir.join(HEATMAP_SVG));
        outputs.push(dir.join(TRADEOFF_SVG));
        self.finish(Stage::Report, false, outputs)
    }

    pub fn run_stage(&self, stage: Stage) -> Result<StageOutcome, PipelineError> {
        match stage {
            Stage::Rate => self.rate_plan(),
            Stage::Aggregate => self.aggregate(),
            Stage::Assemble => self.assemble(),
            Stage::Personas => self.personas_stage(),
            Stage::Administer => self.administer(),
            Stage::Fit => self.fit(),
            Stage::Report => self.report(),
        }
    }

    /// Runs every stage in order, halting at the first failure. The rate stage
    /// only runs when ratings are to be collected.
    pub fn run(&self) -> Result<Vec<StageOutcome>, PipelineError> {
        let mut out = Vec::new();
        for stage in Stage::ALL {
            if stage == Stage::Rate && !self.cfg.config.rating.collect {
                continue;
            }
            out.push(self.run_stage(stage)?);
        }
        Ok(out)
    }

    // ----- lint -----------------------------------------------------------

    /// Referential completeness: every report row traces to an indexed fit
    /// whose hash matches, every fit's personas exist, every fit's sessions
    /// appear as complete in its run manifest, and the report tables equal a
    /// fresh recomputation from the fits. Returns the list of problems.
    pub fn lint(&self) -> Result<Vec<String>, PipelineError> {
        const S: &str = "lint";
        let mut issues = Vec::new();
        let dir = &self.paths().reports;
        let stored = report::read_report(dir)?;
        let fits = match self.indexed_fits(S) {
            Ok(f) => f,
            Err(e) => return Ok(vec![e.to_string()]),
        };
        let sources: BTreeSet<&FitSource> = fits.iter().map(|(s, _)| s).collect();
        for s in &stored.sources {
            if !sources.contains(s) {
                issues.push(format!("report source {} ({}) is not in the fit index or its hash changed", s.path, s.sha256));
            }
        }
        let covered: BTreeSet<(String, Format)> = stored.sources.iter().map(|s| (s.respondent_id.clone(), s.format)).collect();
        let mut check_row = |what: &str, respondent: &str, format: Format| {
            if !covered.contains(&(respondent.to_string(), format)) {
                issues.push(format!("{what} row {respondent} / {format} has no fit source"));
            }
        };
        for e in &stored.effects {
            check_row("effects", &e.respondent_id, e.format);
        }
        for r in &stored.recovery {
            check_row("recovery", &r.report.respondent_id, r.format);
        }
        for t in &stored.tradeoff {
            check_row("tradeoff", &t.point.respondent_id, t.point.format);
        }

        let personas = match self.personas(S) {
            Ok(p) => p,
            Err(e) => {
                issues.push(e.to_string());
                return Ok(issues);
            }
        };
        let persona_ids: BTreeSet<&str> = personas.personas.iter().map(|p| p.id.as_str()).collect();
        for (src, fit) in &fits {
            let manifest_path = self.run_dir(&src.respondent_id).join(crate::admin::runner::MANIFEST_FILE);
            let complete: BTreeSet<(String, String)> = match std::fs::read_to_string(&manifest_path)
                .ok()
                .and_then(|t| serde_json::from_str::<RunManifest>(&t).ok())
            {
                Some(m) => m
                    .sessions
                    .iter()
                    .filter(|e| matches!(e.status, crate::admin::SessionStatus::Complete))
                    .map(|e| (e.key.persona_id.clone(), format!("{}/{}", e.key.format, e.key.condition)))
                    .collect(),
                None => {
                    issues.push(format!("fit {} has no readable run manifest at {}", src.path, manifest_path.display()));
                    continue;
                }
            };
            for row in &fit.theta {
                if !persona_ids.contains(row.persona_id.as_str()) {
                    issues.push(format!("fit {}: persona {} is not in the persona set", src.path, row.persona_id));
                }
                if row.respondent_id != src.respondent_id {
                    issues.push(format!("fit {}: row for respondent {} under {}", src.path, row.respondent_id, src.respondent_id));
                }
                if !complete.contains(&(row.persona_id.clone(), format!("{}/{}", fit.format, row.condition))) {
                    issues.push(format!(
                        "fit {}: {} {} has no complete session in the run manifest",
                        src.path, row.persona_id, row.condition
                    ));
                }
            }
        }

        match build_report(&fits, &personas) {
            Ok(fresh) => {
                if fresh != stored {
                    issues.push("report.json differs from a recomputation from the indexed fits".into());
                }
                for (name, text) in [
                    (report::EFFECTS_CSV, report::effects_csv(&fresh)),
                    (report::RECOVERY_CSV, report::recovery_csv(&fresh)),
                    (report::TRADEOFF_CSV, report::tradeoff_csv(&fresh)),
                ] {
                    match std::fs::read_to_string(dir.join(name)) {
                        Ok(t) if t == text => {}
                        Ok(_) => issues.push(format!("{name} differs from a recomputation from the indexed fits")),
                        Err(e) => issues.push(format!("{name}: {e}")),
                    }
                }
            }
            Err(e) => issues.push(format!("report cannot be recomputed: {e}")),
        }
        Ok(issues)
    }
}

//! Declarative pipeline configuration (TOML) with dotted-key overrides.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::admin::{HttpConfig, RetryPolicy};
use crate::assembly::{AssemblyConfig, AssemblySettings};
use crate::inventory::{Condition, Format};
use crate::irt::FitBackend;

/// Artifact locations. Relative paths resolve against the config file's directory;
/// unset outputs default to files under `work`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSettings {
    /// Item pool (`id, text, domain, keying[, desirability]`).
    pub pool: PathBuf,
    /// Optional list of item ids to drop from the pool.
    pub exclusions: Option<PathBuf>,
    /// Raw desirability ratings (`item, rater, replication, value`). Input unless
    /// `rating.collect` is set, in which case the rate stage writes it.
    pub ratings: Option<PathBuf>,
    pub work: Option<PathBuf>,
    pub desirability: Option<PathBuf>,
    pub inventory: Option<PathBuf>,
    pub personas: Option<PathBuf>,
    pub runs: Option<PathBuf>,
    pub fits: Option<PathBuf>,
    pub reports: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub covariance: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub rating: u64,
    pub personas: u64,
    pub presentation: u64,
    pub simulation: u64,
    pub fit: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { rating: 11, personas: 12, presentation: 13, simulation: 14, fit: 15 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PersonaSettings {
    pub count: usize,
}

impl Default for PersonaSettings {
    fn default() -> Self {
        PersonaSettings { count: 50 }
    }
}

/// Formats × conditions, always fully crossed within each respondent.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Design {
    pub formats: Vec<Format>,
    pub conditions: Vec<Condition>,
}

impl Default for Design {
    fn default() -> Self {
        Design { formats: Format::ALL.to_vec(), conditions: Condition::ALL.to_vec() }
    }
}

/// Simulated respondent settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSettings {
    /// Fake-good shift in trait SD units.
    pub delta: f64,
    pub match_discrimination: bool,
    pub rating_noise_sd: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings { delta: 1.0, match_discrimination: false, rating_noise_sd: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "provider", rename_all = "lowercase")]
pub enum ProviderSettings {
    Sim(SimSettings),
    Http(HttpConfig),
}

/// One respondent (a model or a simulator) answering every persona.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RespondentConfig {
    pub id: String,
    #[serde(flatten)]
    pub provider: ProviderSettings,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct AdminSettings {
    pub parallelism: usize,
    #[serde(flatten)]
    pub retry: RetryPolicy,
}

impl Default for AdminSettings {
    fn default() -> Self {
        AdminSettings { parallelism: 4, retry: RetryPolicy::default() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatingSettings {
    /// Respondent ids acting as raters; empty means every respondent.
    pub raters: Vec<String>,
    pub replications: u32,
    pub block_size: usize,
    /// Collect ratings from the raters during `rate-plan`.
    pub collect: bool,
}

impl Default for RatingSettings {
    fn default() -> Self {
        RatingSettings { raters: Vec::new(), replications: 30, block_size: 20, collect: false }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    pub backend: FitBackend,
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    pub map_starts: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings { backend: FitBackend::Map, chains: 4, warmup: 200, draws: 500, map_starts: 4 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathSettings,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub assembly: AssemblySettings,
    #[serde(default)]
    pub personas: PersonaSettings,
    #[serde(default)]
    pub design: Design,
    #[serde(default)]
    pub respondents: Vec<RespondentConfig>,
    #[serde(default)]
    pub administration: AdminSettings,
    #[serde(default)]
    pub rating: RatingSettings,
    #[serde(default)]
    pub fit: FitSettings,
}

/// Resolved absolute artifact paths.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedPaths {
    pub pool: PathBuf,
    pub exclusions: Option<PathBuf>,
    pub ratings: Option<PathBuf>,
    pub work: PathBuf,
    pub desirability: PathBuf,
    pub inventory: PathBuf,
    pub personas: PathBuf,
    pub runs: PathBuf,
    pub fits: PathBuf,
    pub reports: PathBuf,
    pub lexicon: Option<PathBuf>,
    pub covariance: Option<PathBuf>,
    pub manifest: PathBuf,
}

/// A validated configuration plus its resolved paths and content hash.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    pub paths: ResolvedPaths,
    pub assembly: AssemblyConfig,
    /// SHA-256 of the effective configuration (file text plus overrides).
    pub config_hash: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses an override value as a TOML value, falling back to a bare string.
fn override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies a `dotted.key=value` override to a TOML document.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<(), PipelineError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| PipelineError::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').map(str::trim).collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(PipelineError::Config(format!("override key `{key}` is malformed")));
    }
    let mut table = doc;
    for part in &parts[..parts.len() - 1] {
        let entry = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| PipelineError::Config(format!("override key `{key}`: `{part}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), override_value(raw.trim()));
    Ok(())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl PipelineConfig {
    /// Parses TOML text with overrides; relative paths resolve against `base`.
    pub fn load_str(text: &str, overrides: &[String], base: &Path) -> Result<LoadedConfig, PipelineError> {
        let mut doc: toml::Table =
            toml::from_str(text).map_err(|e| PipelineError::Config(format!("config is not valid TOML: {e}")))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let effective = toml::to_string(&doc).map_err(|e| PipelineError::Config(e.to_string()))?;
        let config: PipelineConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| PipelineError::Config(format!("config: {e}")))?;
        let paths = config.resolve_paths(base);
        let assembly = config.assembly.resolve().map_err(|e| PipelineError::Config(format!("assembly: {e}")))?;
        let loaded = LoadedConfig { config, paths, assembly, config_hash: sha256_hex(effective.as_bytes()) };
        loaded.validate()?;
        Ok(loaded)
    }

    /// Reads and validates a config file.
    pub fn load(path: &Path, overrides: &[String]) -> Result<LoadedConfig, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
        Self::load_str(&text, overrides, &base)
    }

    fn resolve_paths(&self, base: &Path) -> ResolvedPaths {
        let p = &self.paths;
        let work = resolve(base, p.work.as_deref().unwrap_or(Path::new("work")));
        let out = |given: &Option<PathBuf>, default: &str| match given {
            Some(g) => resolve(base, g),
            None => work.join(default),
        };
        ResolvedPaths {
            pool: resolve(base, &p.pool),
            exclusions: p.exclusions.as_ref().map(|x| resolve(base, x)),
            ratings: p.ratings.as_ref().map(|x| resolve(base, x)),
            desirability: out(&p.desirability, "desirability.tsv"),
            inventory: out(&p.inventory, "inventory.tsv"),
            personas: out(&p.personas, "personas.json"),
            runs: out(&p.runs, "runs"),
            fits: out(&p.fits, "fits"),
            reports: out(&p.reports, "reports"),
            lexicon: p.lexicon.as_ref().map(|x| resolve(base, x)),
            covariance: p.covariance.as_ref().map(|x| resolve(base, x)),
            manifest: work.join("pipeline_manifest.json"),
            work,
        }
    }
}

impl LoadedConfig {
    /// Structural checks and existence of every input file. Runs before any stage.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let c = &self.config;
        let err = |m: String| Err(PipelineError::Config(m));
        if c.paths.pool.as_os_str().is_empty() {
            return err("paths.pool is required".into());
        }
        let mut inputs = vec![("pool", &self.paths.pool)];
        if let Some(x) = &self.paths.exclusions {
            inputs.push(("exclusions", x));
        }
        if let Some(x) = &self.paths.lexicon {
            inputs.push(("lexicon", x));
        }
        if let Some(x) = &self.paths.covariance {
            inputs.push(("covariance", x));
        }
        match (&self.paths.ratings, c.rating.collect) {
            (Some(r), false) => inputs.push(("ratings", r)),
            (None, true) => return err("rating.collect needs paths.ratings as its output".into()),
            _ => {}
        }
        for (name, p) in inputs {
            if !p.is_file() {
                return err(format!("{name} file {} does not exist", p.display()));
            }
        }
        if c.design.formats.is_empty() {
            return err("design.formats is empty".into());
        }
        let formats: BTreeSet<_> = c.design.formats.iter().map(|f| f.as_str()).collect();
        if formats.len() != c.design.formats.len() {
            return err("design.formats lists a format twice".into());
        }
        let conditions: BTreeSet<_> = c.design.conditions.iter().copied().collect();
        if conditions.len() != c.design.conditions.len() || conditions.len() != Condition::ALL.len() {
            return err("design.conditions must list honest and fake_good exactly once".into());
        }
        if c.personas.count < 3 {
            return err("personas.count must be at least 3".into());
        }
        if c.respondents.is_empty() {
            return err("at least one [[respondents]] entry is required".into());
        }
        let mut ids = BTreeSet::new();
        for r in &c.respondents {
            let valid = |c: char| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.');
            if r.id.is_empty() || r.id.starts_with('.') || !r.id.chars().all(valid) {
                return err(format!("respondent id `{}` must use only letters, digits, `-`, `_` and `.`", r.id));
            }
            if !ids.insert(r.id.as_str()) {
                return err(format!("respondent id `{}` appears twice", r.id));
            }
            match &r.provider {
                ProviderSettings::Sim(s) if !s.delta.is_finite() => {
                    return err(format!("respondent `{}`: delta must be finite", r.id))
                }
                ProviderSettings::Http(h) if h.base_url.trim().is_empty() || h.model.trim().is_empty() => {
                    return err(format!("respondent `{}`: http provider needs base_url and model", r.id))
                }
                _ => {}
            }
        }
        for rater in &c.rating.raters {
            if !ids.contains(rater.as_str()) {
                return err(format!("rating rater `{rater}` is not a configured respondent"));
            }
        }
        if c.rating.block_size == 0 || c.rating.replications == 0 {
            return err("rating.block_size and rating.replications must be positive".into());
        }
        if c.administration.parallelism == 0 {
            return err("administration.parallelism must be positive".into());
        }
        let f = &c.fit;
        if f.map_starts == 0 || (f.backend == FitBackend::Hmc && (f.chains < 2 || f.draws < 4)) {
            return err("fit needs map_starts ≥ 1 and, for hmc, chains ≥ 2 and draws ≥ 4".into());
        }
        Ok(())
    }

    pub fn rater_ids(&self) -> Vec<String> {
        if self.config.rating.raters.is_empty() {
            self.config.respondents.iter().map(|r| r.id.clone()).collect()
        } else {
            self.config.rating.raters.clone()
        }
    }

    pub fn respondent(&self, id: &str) -> Option<&RespondentConfig> {
        self.config.respondents.iter().find(|r| r.id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_with_pool() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("pool.tsv"), "id\ttext\tdomain\tkeying\n").unwrap();
        dir
    }

    const MINIMAL: &str = r#"
[paths]
pool = "pool.tsv"

[[respondents]]
id = "sim-a"
provider = "sim"
delta = 0.5
"#;

    #[test]
    fn minimal_config_resolves_defaults() {
        let dir = base_with_pool();
        let c = PipelineConfig::load_str(MINIMAL, &[], dir.path()).unwrap();
        assert_eq!(c.paths.inventory, dir.path().join("work/inventory.tsv"));
        assert_eq!(c.config.personas.count, 50);
        assert_eq!(c.config.design.formats.len(), 2);
        match &c.config.respondents[0].provider {
            ProviderSettings::Sim(s) => assert_eq!(s.delta, 0.5),
            other => panic!("{other:?}"),
        }
        assert_eq!(c.assembly.blocks, 30);
    }

    #[test]
    fn overrides_change_values_and_hash() {
        let dir = base_with_pool();
        let a = PipelineConfig::load_str(MINIMAL, &[], dir.path()).unwrap();
        let b = PipelineConfig::load_str(MINIMAL, &["personas.count=7".into(), "fit.backend=hmc".into()], dir.path())
            .unwrap();
        assert_eq!(b.config.personas.count, 7);
        assert_eq!(b.config.fit.backend, FitBackend::Hmc);
        assert_ne!(a.config_hash, b.config_hash);
        assert!(PipelineConfig::load_str(MINIMAL, &["novalue".into()], dir.path()).is_err());
    }

    #[test]
    fn missing_input_files_are_config_errors() {
        let dir = base_with_pool();
        let text = format!("{MINIMAL}\n").replace("pool = \"pool.tsv\"", "pool = \"pool.tsv\"\nratings = \"nope.tsv\"");
        let e = PipelineConfig::load_str(&text, &[], dir.path()).unwrap_err();
        assert!(matches!(e, PipelineError::Config(ref m) if m.contains("ratings")), "{e}");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn design_must_cross_both_conditions() {
        let dir = base_with_pool();
        let e = PipelineConfig::load_str(MINIMAL, &["design.conditions=[\"honest\"]".into()], dir.path()).unwrap_err();
        assert!(e.to_string().contains("conditions"));
        let e = PipelineConfig::load_str(MINIMAL, &["paths.bogus=1".into()], dir.path()).unwrap_err();
        assert!(e.to_string().contains("bogus"));
    }
}

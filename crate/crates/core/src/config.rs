//! Pipeline configuration: one TOML file, `${VAR}` and `${VAR:-default}`
//! expanded from the environment inside string values.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::curate::{CurateConfig, ImageFilter, TextFilter};
use crate::error::{Error, Result};
use crate::sampler::LabelPolicy;
use crate::search::Engine;
use crate::text::short_hash;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct PipelineConfig {
    /// Fans out to per-stage seeds via [`PipelineConfig::stage_seed`].
    pub seed: u64,
    pub paths: PathsConfig,
    pub kg: KgConfig,
    pub attrs: AttrsConfig,
    pub search: SearchConfig,
    pub harvest: HarvestSettings,
    pub curate: CurateSettings,
    pub sampler: LabelPolicy,
    pub shard: ShardSettings,
    pub eval: EvalSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Every stage reads and writes below this directory.
    pub root: PathBuf,
    /// Super-entity list; the bundled list when unset.
    pub super_entities: Option<PathBuf>,
    /// WordNet synsets as JSON; no WordNet import when unset.
    pub wordnet: Option<PathBuf>,
    pub profanity: Option<PathBuf>,
    /// Directory of prompt template overrides.
    pub prompts: Option<PathBuf>,
    /// One benchmark class name per line; matching queries are excluded.
    pub benchmark_terms: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            root: PathBuf::from("run"),
            super_entities: None,
            wordnet: None,
            profanity: None,
            prompts: None,
            benchmark_terms: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KgConfig {
    pub endpoint: String,
    pub min_sitelinks: u64,
    pub page_size: usize,
    pub ancestor_depth: usize,
    /// Sitelink count given to WordNet-only entities.
    pub wordnet_sitelinks: u64,
    /// WordNet synsets whose subtrees are dropped.
    pub wordnet_prune: Vec<String>,
    pub classify_attempts: u32,
}

impl Default for KgConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://query.wikidata.org/sparql".into(),
            min_sitelinks: 5,
            page_size: 10_000,
            ancestor_depth: 6,
            wordnet_sitelinks: 5,
            wordnet_prune: vec!["person.n.01".into()],
            classify_attempts: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmBackendConfig {
    pub id: String,
    /// OpenAI-compatible base URL, e.g. `https://api.openai.com/v1`.
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub api_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttrsConfig {
    /// Entities with fewer sitelinks get no attributes.
    pub popularity_cutoff: u64,
    pub attempts: u32,
    /// The first backend also classifies entities and picks natural types.
    pub backends: Vec<LlmBackendConfig>,
}

impl Default for AttrsConfig {
    fn default() -> Self {
        Self { popularity_cutoff: 25, attempts: 2, backends: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub default_engine: Engine,
    /// Engine for living-domain queries; `default_engine` when unset.
    pub living_engine: Option<Engine>,
    pub qps: f64,
    pub retries: u32,
    pub backoff_ms: u64,
    /// Dispatch stops cleanly once this much has been spent.
    pub budget_usd: f64,
    pub workers: usize,
    pub google_endpoint: String,
    pub bing_endpoint: String,
    pub google_api_key: Option<String>,
    pub google_cse_id: Option<String>,
    pub bing_api_key: Option<String>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            default_engine: Engine::Bing,
            living_engine: None,
            qps: 3.0,
            retries: 3,
            backoff_ms: 1000,
            budget_usd: 10_000.0,
            workers: 8,
            google_endpoint: crate::search::GOOGLE_ENDPOINT.into(),
            bing_endpoint: crate::search::BING_ENDPOINT.into(),
            google_api_key: None,
            google_cse_id: None,
            bing_api_key: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarvestSettings {
    pub workers: usize,
    pub host_delay_ms: u64,
    pub retries: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
    pub max_image_bytes: usize,
    pub use_engine_snippets: bool,
    /// Stamp every record with this time instead of the clock.
    pub fixed_timestamp: Option<DateTime<Utc>>,
}

impl Default for HarvestSettings {
    fn default() -> Self {
        Self {
            workers: 64,
            host_delay_ms: 250,
            retries: 2,
            backoff_ms: 500,
            timeout_secs: 30,
            max_image_bytes: 20 * 1024 * 1024,
            use_engine_snippets: false,
            fixed_timestamp: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurateSettings {
    pub max_alt_chars: usize,
    pub drop_json: bool,
    pub max_aspect: u64,
    pub min_area: u64,
    pub dedup_threshold: f64,
    pub leak_threshold: f64,
    /// Descriptor cache of evaluation images for leak detection.
    pub eval_descriptors: Option<PathBuf>,
}

impl Default for CurateSettings {
    fn default() -> Self {
        Self {
            max_alt_chars: 500,
            drop_json: true,
            max_aspect: 4,
            min_area: 4096,
            dedup_threshold: 0.8,
            leak_threshold: 0.8,
            eval_descriptors: None,
        }
    }
}

impl CurateSettings {
    pub fn to_curate_config(&self) -> CurateConfig {
        CurateConfig {
            text: TextFilter { max_chars: self.max_alt_chars, drop_json: self.drop_json },
            image: ImageFilter { max_aspect: self.max_aspect, min_area: self.min_area },
            dedup_threshold: self.dedup_threshold as f32,
            leak_threshold: self.leak_threshold as f32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShardSettings {
    pub size: usize,
}

impl Default for ShardSettings {
    fn default() -> Self {
        Self { size: crate::store::DEFAULT_SHARD_SIZE }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// One classification spec per class-name variant.
    pub specs: Vec<PathBuf>,
    /// Precomputed embeddings for every image and text the specs use.
    pub encoder: Option<PathBuf>,
    pub retrieval: Option<PathBuf>,
}

/// Expand `${VAR}` and `${VAR:-default}`. An unset `${VAR}` is an error
/// naming `field`.
pub fn interpolate(text: &str, field: &str, env: &dyn Fn(&str) -> Option<String>) -> Result<String> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after.find('}').ok_or_else(|| Error::Config(format!("{field}: unterminated `${{` in `{text}`")))?;
        let expr = &after[..end];
        let (name, default) = match expr.split_once(":-") {
            Some((n, d)) => (n, Some(d)),
            None => (expr, None),
        };
        let value = env(name).filter(|v| !v.is_empty());
        match (value, default) {
            (Some(v), _) => out.push_str(&v),
            (None, Some(d)) => out.push_str(d),
            (None, None) => return Err(Error::Config(format!("{field}: environment variable {name} is not set"))),
        }
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn interpolate_value(v: &mut toml::Value, path: &str, env: &dyn Fn(&str) -> Option<String>) -> Result<()> {
    match v {
        toml::Value::String(s) => *s = interpolate(s, path, env)?,
        toml::Value::Array(items) => {
            for (i, item) in items.iter_mut().enumerate() {
                interpolate_value(item, &format!("{path}[{i}]"), env)?;
            }
        }
        toml::Value::Table(t) => {
            for (k, item) in t.iter_mut() {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                interpolate_value(item, &p, env)?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn empty_to_none(v: &mut Option<String>) {
    if v.as_deref().is_some_and(|s| s.trim().is_empty()) {
        *v = None;
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str, env: &dyn Fn(&str) -> Option<String>) -> Result<Self> {
        let mut value: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        interpolate_value(&mut value, "", env)?;
        let mut cfg: Self = value.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        empty_to_none(&mut cfg.search.google_api_key);
        empty_to_none(&mut cfg.search.google_cse_id);
        empty_to_none(&mut cfg.search.bing_api_key);
        for b in &mut cfg.attrs.backends {
            empty_to_none(&mut b.api_key);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load from a file. Relative paths inside the file resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let mut cfg = Self::from_toml_str(&text, &|k| std::env::var(k).ok())
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(dir) = path.parent() {
            cfg.resolve_relative(dir);
        }
        Ok(cfg)
    }

    pub fn resolve_relative(&mut self, base: &Path) {
        self.each_path(|p| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        });
    }

    /// Inverse of [`resolve_relative`](Self::resolve_relative) for paths under `base`.
    pub fn relative_to(&mut self, base: &Path) {
        self.each_path(|p| {
            if let Ok(rel) = p.strip_prefix(base) {
                *p = rel.to_path_buf();
            }
        });
    }

    fn each_path(&mut self, mut f: impl FnMut(&mut PathBuf)) {
        f(&mut self.paths.root);
        for p in [
            &mut self.paths.super_entities,
            &mut self.paths.wordnet,
            &mut self.paths.profanity,
            &mut self.paths.prompts,
            &mut self.paths.benchmark_terms,
            &mut self.curate.eval_descriptors,
            &mut self.eval.encoder,
            &mut self.eval.retrieval,
        ]
        .into_iter()
        .flatten()
        {
            f(p);
        }
        for p in &mut self.eval.specs {
            f(p);
        }
    }

    /// Every problem found, each prefixed with its field path.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                out.push(msg.to_string());
            }
        };
        check(!self.paths.root.as_os_str().is_empty(), "paths.root: must not be empty");
        check(self.kg.page_size > 0, "kg.page_size: must be positive");
        check(self.kg.ancestor_depth > 0, "kg.ancestor_depth: must be positive");
        check(self.attrs.attempts > 0, "attrs.attempts: must be positive");
        check(self.search.qps >= 0.0 && self.search.qps.is_finite(), "search.qps: must be a finite number >= 0");
        check(self.search.retries > 0, "search.retries: must be positive");
        check(
            self.search.budget_usd >= 0.0 && self.search.budget_usd.is_finite(),
            "search.budget_usd: must be a finite number >= 0",
        );
        check(self.search.workers > 0, "search.workers: must be positive");
        check(self.harvest.workers > 0, "harvest.workers: must be positive");
        check(self.harvest.retries > 0, "harvest.retries: must be positive");
        check(self.harvest.max_image_bytes > 0, "harvest.max_image_bytes: must be positive");
        check(self.curate.max_aspect > 0, "curate.max_aspect: must be positive");
        check((-1.0..=1.0).contains(&self.curate.dedup_threshold), "curate.dedup_threshold: must lie in [-1, 1]");
        check((-1.0..=1.0).contains(&self.curate.leak_threshold), "curate.leak_threshold: must lie in [-1, 1]");
        check(self.shard.size > 0, "shard.size: must be positive");
        if let Err(e) = self.sampler.validate() {
            out.push(format!("sampler: {e}"));
        }
        let mut ids = std::collections::HashSet::new();
        for (i, b) in self.attrs.backends.iter().enumerate() {
            if b.id.trim().is_empty() {
                out.push(format!("attrs.backends[{i}].id: must not be empty"));
            }
            if !ids.insert(b.id.as_str()) {
                out.push(format!("attrs.backends[{i}].id: duplicate id `{}`", b.id));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Deterministic per-stage seed derived from the top-level one.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        let h = short_hash(&[&self.seed.to_string(), stage]);
        u64::from_str_radix(&h[..16.min(h.len())], 16).unwrap_or(self.seed)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

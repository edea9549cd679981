//! Stage functions behind the command line. Every stage reads its
//! predecessor's files under the run root and writes its own; nothing else
//! is shared between stages.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attrs::{select_natural_type, Attribute, AttributeGenerator, NaturalType};
use crate::config::PipelineConfig;
use crate::curate::{
    apply_filters, compute_descriptors, dedup_and_flag, exclude_benchmark_terms, read_descriptor_cache,
    write_descriptor_cache, DescriptorBackend, DescriptorSet, GrayscaleBackend, ReportEntry,
};
use crate::error::{Error, Result};
use crate::harvest::{harvest, read_manifest, HarvestConfig, HarvestPaths, ImageRecord};
use crate::http::{ClientConfig, HttpClient, UreqClient};
use crate::jsonl;
use crate::kg::{
    apply_profanity_filter, bundled_super_entities, classify_visual, extract_entities, import_wordnet_living,
    load_super_entities, merge_catalogs, wordnet_ancestors, write_catalog, AncestorResolver, Blocklist, Entity,
    EntitySource, ExtractionConfig, HttpSparqlEndpoint, SparqlEndpoint, VerdictCache, WordnetExclusions, WordnetSynset,
};
use crate::llm::{CachedBackend, HttpChatBackend, LlmBackend, PromptTemplates, ResponseCache};
use crate::query::{assign_engines, build_queries, format_query_stats, query_stats, SearchQuery};
use crate::ratelimit::RetryPolicy;
use crate::sampler::sample_manifest;
use crate::search::{
    dispatch, read_results, BingEngine, CostLedger, DispatchConfig, Engine, GoogleEngine, ImageSearchEngine,
    LedgerSnapshot, SearchClient,
};
use crate::store::{assemble, compute_stats, validate_manifest, write_shards, DatasetRecord};

/// File layout of one run.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    fn at(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }
    pub fn entities(&self) -> PathBuf {
        self.at("catalog/entities.jsonl")
    }
    pub fn profanity_removed(&self) -> PathBuf {
        self.at("catalog/profanity_removed.jsonl")
    }
    pub fn verdicts(&self) -> PathBuf {
        self.at("catalog/verdicts.jsonl")
    }
    pub fn entities_final(&self) -> PathBuf {
        self.at("catalog/entities.final.jsonl")
    }
    pub fn non_visual(&self) -> PathBuf {
        self.at("catalog/non_visual.jsonl")
    }
    pub fn undecided(&self) -> PathBuf {
        self.at("catalog/undecided.jsonl")
    }
    pub fn attributes(&self) -> PathBuf {
        self.at("catalog/attributes.jsonl")
    }
    pub fn natural_types(&self) -> PathBuf {
        self.at("catalog/natural_types.jsonl")
    }
    pub fn queries(&self) -> PathBuf {
        self.at("catalog/queries.jsonl")
    }
    pub fn excluded_queries(&self) -> PathBuf {
        self.at("catalog/excluded_queries.jsonl")
    }
    pub fn query_stats(&self) -> PathBuf {
        self.at("catalog/query_stats.txt")
    }
    pub fn search_results(&self) -> PathBuf {
        self.at("search/results.jsonl")
    }
    pub fn search_checkpoint(&self) -> PathBuf {
        self.at("search/checkpoint.jsonl")
    }
    pub fn ledger(&self) -> PathBuf {
        self.at("search/ledger.json")
    }
    pub fn harvest(&self) -> HarvestPaths {
        HarvestPaths::new(self.at("harvest"))
    }
    pub fn filtered(&self) -> PathBuf {
        self.at("curate/filtered.jsonl")
    }
    pub fn filter_report(&self) -> PathBuf {
        self.at("curate/filter_report.jsonl")
    }
    pub fn dedup_report(&self) -> PathBuf {
        self.at("curate/dedup_report.jsonl")
    }
    pub fn descriptors(&self) -> PathBuf {
        self.at("curate/descriptors.bin")
    }
    pub fn clusters(&self) -> PathBuf {
        self.at("curate/clusters.jsonl")
    }
    pub fn manifest(&self) -> PathBuf {
        self.at("dataset/manifest.jsonl")
    }
    pub fn stats_txt(&self) -> PathBuf {
        self.at("dataset/stats.txt")
    }
    pub fn stats_json(&self) -> PathBuf {
        self.at("dataset/stats.json")
    }
    pub fn shards(&self) -> PathBuf {
        self.at("dataset/shards")
    }
    pub fn labels(&self) -> PathBuf {
        self.at("dataset/labels.jsonl")
    }
    pub fn eval_report(&self) -> PathBuf {
        self.at("eval/report.json")
    }
    pub fn llm_cache(&self) -> PathBuf {
        self.at("cache/llm")
    }
}

/// External services a run talks to.
pub struct Services {
    pub sparql: Arc<dyn SparqlEndpoint>,
    /// The first backend also classifies entities and picks natural types.
    pub llms: Vec<Arc<dyn LlmBackend>>,
    pub http: Arc<dyn HttpClient>,
    pub engines: Vec<Arc<dyn ImageSearchEngine>>,
    pub descriptor: Arc<dyn DescriptorBackend>,
}

impl Services {
    /// Real services as configured. Search engines without credentials are
    /// left out; the stages that need a missing service say so.
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        let http: Arc<dyn HttpClient> = Arc::new(UreqClient::new(ClientConfig {
            timeout: Duration::from_secs(cfg.harvest.timeout_secs),
            max_body_bytes: cfg.harvest.max_image_bytes as u64,
            ..ClientConfig::default()
        }));
        let sparql = Arc::new(HttpSparqlEndpoint::new(cfg.kg.endpoint.clone(), http.clone(), RetryPolicy::default()));
        let cache = Arc::new(ResponseCache::on_disk(Layout::new(&cfg.paths.root).llm_cache()));
        let llms = cfg
            .attrs
            .backends
            .iter()
            .map(|b| {
                let inner = HttpChatBackend::new(&b.id, &b.base_url, &b.model, b.api_key.clone(), http.clone());
                Arc::new(CachedBackend::new(inner, cache.clone())) as Arc<dyn LlmBackend>
            })
            .collect();
        let mut engines: Vec<Arc<dyn ImageSearchEngine>> = Vec::new();
        if let Some(key) = &cfg.search.bing_api_key {
            engines.push(Arc::new(BingEngine::new(&cfg.search.bing_endpoint, key)));
        }
        if let (Some(key), Some(cx)) = (&cfg.search.google_api_key, &cfg.search.google_cse_id) {
            engines.push(Arc::new(GoogleEngine::new(&cfg.search.google_endpoint, key, cx)));
        }
        Self { sparql, llms, http, engines, descriptor: Arc::new(GrayscaleBackend::default()) }
    }

    fn primary_llm(&self) -> Result<&dyn LlmBackend> {
        self.llms
            .first()
            .map(|b| b.as_ref())
            .ok_or_else(|| Error::Config("attrs.backends: no LLM backend configured".into()))
    }
}

/// Outcome of one stage: human-readable summary lines plus named counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub summary: Vec<String>,
    pub counts: BTreeMap<String, u64>,
    /// Some items failed but the stage's output is valid.
    pub partial: bool,
}

impl StageReport {
    fn new(stage: &str) -> Self {
        Self { stage: stage.to_string(), ..Default::default() }
    }

    fn count(&mut self, key: &str, n: usize) -> &mut Self {
        self.counts.insert(key.to_string(), n as u64);
        self
    }

    fn line(&mut self, s: impl Into<String>) -> &mut Self {
        self.summary.push(s.into());
        self
    }
}

fn require(path: &Path, stage: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingStage { path: path.to_path_buf(), stage })
    }
}

fn read_stage<T: serde::de::DeserializeOwned>(path: &Path, stage: &'static str) -> Result<Vec<T>> {
    require(path, stage)?;
    jsonl::read(path)
}

fn templates(cfg: &PipelineConfig) -> Result<PromptTemplates> {
    match &cfg.paths.prompts {
        Some(dir) => PromptTemplates::load_dir(dir),
        None => Ok(PromptTemplates::default()),
    }
}

fn load_wordnet(path: &Path) -> Result<Vec<WordnetSynset>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn load_terms(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(str::to_string).collect())
}

pub fn extract(cfg: &PipelineConfig, svc: &Services) -> Result<StageReport> {
    let layout = Layout::new(&cfg.paths.root);
    let super_entities = match &cfg.paths.super_entities {
        Some(p) => load_super_entities(p)?,
        None => bundled_super_entities(),
    }
    .into_iter()
    .filter(|s| s.include)
    .collect();
    let ecfg = ExtractionConfig {
        min_sitelinks: cfg.kg.min_sitelinks,
        super_entities,
        endpoint_url: cfg.kg.endpoint.clone(),
        page_size: cfg.kg.page_size,
        profanity_list_path: cfg.paths.profanity.clone(),
    };
    let extracted = extract_entities(&ecfg, svc.sparql.as_ref())?;
    let n_wikidata = extracted.entities.len();
    let mut entities = extracted.entities;
    if let Some(p) = &cfg.paths.wordnet {
        let synsets = load_wordnet(p)?;
        let excl = WordnetExclusions { prune: cfg.kg.wordnet_prune.clone(), ..Default::default() };
        let wn = import_wordnet_living(&synsets, &excl, cfg.kg.wordnet_sitelinks)?;
        entities = merge_catalogs(entities, wn);
    }
    let n_wordnet = entities.iter().filter(|e| e.source == EntitySource::Wordnet).count();
    let mut removed = Vec::new();
    if let Some(p) = &cfg.paths.profanity {
        let (kept, r) = apply_profanity_filter(entities, &Blocklist::load(p)?);
        entities = kept;
        removed = r;
    }
    jsonl::write(&layout.profanity_removed(), &removed)?;
    write_catalog(&layout.entities(), &entities)?;

    let mut rep = StageReport::new("extract");
    rep.count("wikidata", n_wikidata)
        .count("wordnet", n_wordnet)
        .count("blocklisted", removed.len())
        .count("skipped_rows", extracted.skipped_rows)
        .count("sparql_requests", extracted.requests)
        .count("entities", entities.len())
        .line(format!(
            "{} entities ({n_wikidata} from the knowledge graph, {n_wordnet} from WordNet), {} removed by the blocklist",
            entities.len(),
            removed.len()
        ));
    Ok(rep)
}

pub fn classify(cfg: &PipelineConfig, svc: &Services) -> Result<StageReport> {
    let layout = Layout::new(&cfg.paths.root);
    let entities: Vec<Entity> = read_stage(&layout.entities(), "extract")?;
    let cache = VerdictCache::open(&layout.verdicts())?;
    let p = classify_visual(&entities, svc.primary_llm()?, &templates(cfg)?, &cache, cfg.kg.classify_attempts)?;
    write_catalog(&layout.entities_final(), &p.visual)?;
    write_catalog(&layout.non_visual(), &p.non_visual)?;
    write_catalog(&layout.undecided(), &p.undecided)?;
    let mut rep = StageReport::new("classify");
    rep.count("visual", p.visual.len())
        .count("non_visual", p.non_visual.len())
        .count("undecided", p.undecided.len())
        .line(format!("{} visual, {} non-visual, {} undecided", p.visual.len(), p.non_visual.len(), p.undecided.len()));
    if !p.undecided.is_empty() {
        rep.partial = true;
        rep.line("undecided entities are retried on the next run");
    }
    Ok(rep)
}

pub fn attrs(cfg: &PipelineConfig, svc: &Services) -> Result<StageReport> {
    let layout = Layout::new(&cfg.paths.root);
    let entities: Vec<Entity> = read_stage(&layout.entities_final(), "classify")?;
    if svc.llms.is_empty() {
        svc.primary_llm()?;
    }
    let backends: Vec<&dyn LlmBackend> = svc.llms.iter().map(|b| b.as_ref() as &dyn LlmBackend).collect();
    let mut generator = AttributeGenerator::new(backends, cfg.attrs.popularity_cutoff);
    generator.templates = templates(cfg)?;
    generator.attempts = cfg.attrs.attempts;
    let attributes = crate::attrs::generate_catalog(&entities, &generator, cfg.search.workers);
    jsonl::write(&layout.attributes(), &attributes)?;
    let eligible = entities.iter().filter(|e| e.sitelinks >= cfg.attrs.popularity_cutoff).count();
    let with_attrs = {
        let mut ids: Vec<&str> = attributes.iter().map(|a| a.entity_id.as_str()).collect();
        ids.dedup();
        ids.len()
    };
    let mut rep = StageReport::new("attrs");
    rep.count("eligible_entities", eligible)
        .count("entities_with_attributes", with_attrs)
        .count("attributes", attributes.len())
        .line(format!(
            "{} attributes for {with_attrs} of {eligible} entities above the popularity cutoff",
            attributes.len()
        ));
    Ok(rep)
}

pub fn natural_types(cfg: &PipelineConfig, svc: &Services) -> Result<StageReport> {
    let layout = Layout::new(&cfg.paths.root);
    let entities: Vec<Entity> = read_stage(&layout.entities_final(), "classify")?;
    let attributes: Vec<Attribute> = read_stage(&layout.attributes(), "attrs")?;
    let backend = svc.primary_llm()?;
    let tpl = templates(cfg)?;
    let synsets = match &cfg.paths.wordnet {
        Some(p) => load_wordnet(p)?,
        None => Vec::new(),
    };
    let resolver = AncestorResolver::new(svc.sparql.as_ref(), cfg.kg.ancestor_depth);
    let wanted: std::collections::HashSet<&str> = attributes.iter().map(|a| a.entity_id.as_str()).collect();
    let mut out: Vec<NaturalType> = Vec::new();
    let mut no_ancestors = 0;
    let mut failed = 0;
    for e in entities.iter().filter(|e| wanted.contains(e.identifier.as_str())) {
        let ancestors = if e.source == EntitySource::Wordnet {
            wordnet_ancestors(&synsets, &e.identifier, &e.name, cfg.kg.ancestor_depth)
        } else {
            resolver.ancestors(&e.identifier, &e.name)?
        };
        if ancestors.is_empty() {
            log::warn!("{} ({}) has no ancestors; no natural type", e.identifier, e.name);
            no_ancestors += 1;
            continue;
        }
        match select_natural_type(e, &ancestors, backend, &tpl) {
            Ok(nt) => out.push(nt),
            Err(err) => {
                log::warn!("natural type for {} failed: {err}", e.identifier);
                failed += 1;
            }
        }
    }
    jsonl::write(&layout.natural_types(), &out)?;
    let mut rep = StageReport::new("natural-types");
    rep.count("natural_types", out.len())
        .count("no_ancestors", no_ancestors)
        .count("failed", failed)
        .line(format!("{} natural types; {no_ancestors} entities without ancestors, {failed} failures", out.len()));
    rep.partial = failed > 0;
    Ok(rep)
}

fn entities_with_types(layout: &Layout) -> Result<Vec<Entity>> {
    let mut entities: Vec<Entity> = read_stage(&layout.entities_final(), "classify")?;
    let types: Vec<NaturalType> = jsonl::read_or_empty(&layout.natural_types())?;
    let by_id: HashMap<&str, &NaturalType> = types.iter().map(|t| (t.entity_id.as_str(), t)).collect();
    for e in &mut entities {
        if let Some(t) = by_id.get(e.identifier.as_str()) {
            e.natural_type = Some(t.type_name.clone());
            e.natural_type_reason = Some(t.reason.clone());
        }
    }
    Ok(entities)
}

pub fn queries(cfg: &PipelineConfig) -> Result<StageReport> {
    let layout = Layout::new(&cfg.paths.root);
    let entities: Vec<Entity> = read_stage(&layout.entities_final(), "classify")?;
    let attributes: Vec<Attribute> = read_stage(&layout.attributes(), "attrs")?;
    let types: Vec<NaturalType> = read_stage(&layout.natural_types(), "natural-types")?;
    let built = build_queries(&entities, &attributes, &types);
    let mut all = built.queries;
    assign_engines(&mut all, cfg.search.default_engine, cfg.search.living_engine);
    let (kept, removed) = match &cfg.paths.benchmark_terms {
        Some(p) => exclude_benchmark_terms(all, &load_terms(p)?),
        None => (all, Vec::new()),
    };
    jsonl::write(&layout.queries(), &kept)?;
    jsonl::write(&layout.excluded_queries(), &removed)?;
    let table = format_query_stats(&query_stats(&kept));
    std::fs::write(layout.query_stats(), &table).map_err(|e| Error::file(layout.query_stats(), e))?;

    let mut rep = StageReport::new("queries");
    rep.count("queries", kept.len())
        .count("excluded_by_benchmark_terms", removed.len())
        .count("skipped_no_natural_type", built.skips.no_natural_type)
        .count("skipped_no_mention", built.skips.no_mention)
        .count("skipped_unsafe", built.skips.unsafe_result)
        .line(format!("{} queries, {} excluded by benchmark terms", kept.len(), removed.len()));
    for l in table.lines() {
        rep.line(l.to_string());
    }
    Ok(rep)
}

pub fn search(cfg: &PipelineConfig, svc: &Services) -> Result<StageReport> {
    let layout = Layout::new(&cfg.paths.root);
    let queries: Vec<SearchQuery> = read_stage(&layout.queries(), "queries")?;
    let entities: Vec<Entity> = read_stage(&layout.entities_final(), "classify")?;
    std::fs::create_dir_all(layout.root.join("search")).map_err(|e| Error::file(&layout.root, e))?;
    let previous: LedgerSnapshot = match std::fs::read(layout.ledger()) {
        Ok(bytes) => serde_json::from_slice(&bytes)?,
        Err(_) => LedgerSnapshot::default(),
    };
    let ledger = Arc::new(CostLedger::from_snapshot(previous).with_cap_usd(cfg.search.budget_usd));
    let retry = RetryPolicy {
        max_attempts: cfg.search.retries,
        initial_backoff: Duration::from_millis(cfg.search.backoff_ms),
        ..RetryPolicy::default()
    };
    let client = SearchClient::new(svc.http.clone(), ledger.clone())
        .with_qps(Engine::Bing, cfg.search.qps)
        .with_qps(Engine::Google, cfg.search.qps)
        .with_retry(retry);
    let engines: Vec<&dyn ImageSearchEngine> = svc.engines.iter().map(|e| e.as_ref()).collect();
    let dcfg = DispatchConfig { workers: cfg.search.workers, default_engine: cfg.search.default_engine };
    let r =
        dispatch(&queries, &entities, &engines, &client, &dcfg, &layout.search_results(), &layout.search_checkpoint())?;
    let snap = ledger.snapshot();
    std::fs::write(layout.ledger(), serde_json::to_vec_pretty(&snap)?).map_err(|e| Error::file(layout.ledger(), e))?;

    let mut rep = StageReport::new("search");
    rep.count("queries", r.queries)
        .count("already_complete", r.already_complete)
        .count("completed", r.completed)
        .count("failed", r.failed)
        .count("not_attempted", r.not_attempted)
        .count("requests", r.requests)
        .count("results", r.results)
        .line(format!(
            "{} of {} queries complete ({} this run, {} failed, {} not attempted), {} results from {} requests",
            r.already_complete + r.completed,
            r.queries,
            r.completed,
            r.failed,
            r.not_attempted,
            r.results,
            r.requests
        ))
        .line(format!(
            "spend so far {} ({} Google calls, {} Bing calls)",
            ledger.total_usd(),
            snap.google_calls,
            snap.bing_calls
        ));
    if r.budget_exhausted {
        rep.line(format!(
            "budget cap ${:.2} reached; raise search.budget_usd and rerun to continue",
            cfg.search.budget_usd
        ));
    }
    for e in &r.fatal_engines {
        rep.line(format!("engine {e} stopped after a fatal error"));
    }
    rep.partial = r.failed > 0 || !r.fatal_engines.is_empty();
    Ok(rep)
}

pub fn harvest_stage(cfg: &PipelineConfig, svc: &Services) -> Result<StageReport> {
    let layout = Layout::new(&cfg.paths.root);
    require(&layout.search_results(), "search")?;
    let mut results = read_results(&layout.search_results())?;
    // results.jsonl is appended in completion order; fix a canonical order
    results.sort_by(|a, b| {
        (&a.query_ref, a.raw_rank, &a.image_url, &a.page_url).cmp(&(
            &b.query_ref,
            b.raw_rank,
            &b.image_url,
            &b.page_url,
        ))
    });
    let hcfg = HarvestConfig {
        workers: cfg.harvest.workers,
        host_delay: Duration::from_millis(cfg.harvest.host_delay_ms),
        retry: RetryPolicy {
            max_attempts: cfg.harvest.retries,
            initial_backoff: Duration::from_millis(cfg.harvest.backoff_ms),
            ..RetryPolicy::default()
        },
        max_image_bytes: cfg.harvest.max_image_bytes,
        use_engine_snippets: cfg.harvest.use_engine_snippets,
        fetched_at: cfg.harvest.fixed_timestamp,
    };
    let r = harvest(&results, svc.http.as_ref(), &hcfg, &layout.harvest())?;
    let mut rep = StageReport::new("harvest");
    rep.count("results", r.input_results)
        .count("from_checkpoint", r.from_checkpoint)
        .count("records", r.records.len())
        .count("failures", r.failures.len())
        .count("quarantined", r.quarantined.len())
        .count("alt_texts", r.records.iter().map(|x| x.alt_texts.len()).sum())
        .line(format!(
            "{} results: {} images, {} failures, {} quarantined ({} resumed from checkpoint)",
            r.input_results,
            r.records.len(),
            r.failures.len(),
            r.quarantined.len(),
            r.from_checkpoint
        ));
    rep.partial = !r.failures.is_empty() || !r.quarantined.is_empty();
    Ok(rep)
}

pub fn curate_stage(cfg: &PipelineConfig) -> Result<StageReport> {
    let layout = Layout::new(&cfg.paths.root);
    let records = read_manifest(&layout.harvest().manifest())?;
    let n = records.len();
    let alts_before: usize = records.iter().map(|r| r.alt_texts.len()).sum();
    let (kept, report) = apply_filters(records, &cfg.curate.to_curate_config());
    jsonl::write(&layout.filtered(), &kept)?;
    jsonl::write(&layout.filter_report(), &report)?;
    let alts_after: usize = kept.iter().map(|r| r.alt_texts.len()).sum();
    let mut rep = StageReport::new("curate");
    rep.count("input_records", n)
        .count("records", kept.len())
        .count("dropped_images", n - kept.len())
        .count("alt_texts", alts_after)
        .count("dropped_alt_texts", report.iter().filter(|r| r.rule == "text").count())
        .line(format!("{} of {n} images kept; {alts_after} of {alts_before} alt texts kept", kept.len()));
    Ok(rep)
}

/// `(record id, error)` for images that could not be described.
type Undescribed = Vec<(String, String)>;

/// Reuse cached descriptors from the same backend and compute the rest.
fn descriptors_for(
    records: &[ImageRecord],
    images_root: &Path,
    cache_path: &Path,
    backend: &dyn DescriptorBackend,
) -> Result<(DescriptorSet, Undescribed, usize)> {
    let mut cached = match read_descriptor_cache(cache_path) {
        Ok(set) if set.backend_id == backend.id() && set.dim == backend.dim() => set,
        _ => DescriptorSet::new(backend.id(), backend.dim()),
    };
    let missing: Vec<(String, PathBuf)> = records
        .iter()
        .filter(|r| !cached.items.contains_key(&r.id))
        .map(|r| (r.id.clone(), images_root.join(&r.path)))
        .collect();
    let reused = records.len() - missing.len();
    let (fresh, failed) = compute_descriptors(&missing, backend);
    for (id, d) in fresh.items {
        cached.insert(id, d)?;
    }
    let mut set = DescriptorSet::new(backend.id(), backend.dim());
    for r in records {
        if let Some(d) = cached.items.remove(&r.id) {
            set.insert(r.id.clone(), d)?;
        }
    }
    write_descriptor_cache(cache_path, &set)?;
    Ok((set, failed, reused))
}

pub fn dedup(cfg: &PipelineConfig, svc: &Services) -> Result<StageReport> {
    let layout = Layout::new(&cfg.paths.root);
    let kept: Vec<ImageRecord> = read_stage(&layout.filtered(), "curate")?;
    let queries: Vec<SearchQuery> = read_stage(&layout.queries(), "queries")?;
    let entities = entities_with_types(&layout)?;
    let (set, failed, reused) =
        descriptors_for(&kept, &layout.harvest().root, &layout.descriptors(), svc.descriptor.as_ref())?;
    let eval = match &cfg.curate.eval_descriptors {
        Some(p) => Some(read_descriptor_cache(p)?),
        None => None,
    };
    let excluded: HashMap<String, String> = match &cfg.paths.benchmark_terms {
        Some(p) => {
            exclude_benchmark_terms(queries.clone(), &load_terms(p)?).1.into_iter().map(|m| (m.id, m.term)).collect()
        }
        None => HashMap::new(),
    };
    let n = kept.len();
    let out = dedup_and_flag(kept, set, &failed, &cfg.curate.to_curate_config(), eval.as_ref(), &excluded)?;
    jsonl::write(&layout.dedup_report(), &out.report)?;
    jsonl::write(&layout.clusters(), &out.clusters.iter().filter(|c| c.member_ids.len() > 1).collect::<Vec<_>>())?;
    let records = assemble(&out.records, &queries, &entities)?;
    let problems = validate_manifest(&records, &entities, &queries);
    for p in &problems {
        log::warn!("manifest: {p}");
    }
    jsonl::write(&layout.manifest(), &records)?;

    let count_rule = |rule: &str| out.report.iter().filter(|r: &&ReportEntry| r.rule == rule).count();
    let excluded_n = records.iter().filter(|r| r.excluded).count();
    let mut rep = StageReport::new("dedup");
    rep.count("input_records", n)
        .count("descriptors_reused", reused)
        .count("descriptor_failures", failed.len())
        .count("duplicates_merged", count_rule("dedup"))
        .count("eval_leaks", count_rule("eval_leak"))
        .count("benchmark_excluded", count_rule("benchmark_term"))
        .count("records", records.len())
        .count("excluded", excluded_n)
        .count("manifest_problems", problems.len())
        .line(format!(
            "{} records ({excluded_n} excluded) from {n}; {} duplicates merged, {} eval leaks",
            records.len(),
            count_rule("dedup"),
            count_rule("eval_leak")
        ));
    rep.partial = !problems.is_empty();
    Ok(rep)
}

fn read_dataset(layout: &Layout) -> Result<Vec<DatasetRecord>> {
    read_stage(&layout.manifest(), "dedup")
}

pub fn stats(cfg: &PipelineConfig) -> Result<StageReport> {
    let layout = Layout::new(&cfg.paths.root);
    let records = read_dataset(&layout)?;
    let queries: Vec<SearchQuery> = read_stage(&layout.queries(), "queries")?;
    let s = compute_stats(&records, &queries);
    let table = s.to_table();
    std::fs::write(layout.stats_txt(), &table).map_err(|e| Error::file(layout.stats_txt(), e))?;
    std::fs::write(layout.stats_json(), serde_json::to_vec_pretty(&s)?)
        .map_err(|e| Error::file(layout.stats_json(), e))?;
    let mut rep = StageReport::new("stats");
    rep.count("images", s.total.images as usize).count("alt_texts", s.total.alt_texts as usize);
    for l in table.lines() {
        rep.line(l.to_string());
    }
    Ok(rep)
}

pub fn shard(cfg: &PipelineConfig) -> Result<StageReport> {
    let layout = Layout::new(&cfg.paths.root);
    let records = read_dataset(&layout)?;
    let out = write_shards(&records, &layout.harvest().root, &layout.shards(), cfg.shard.size)?;
    let mut rep = StageReport::new("shard");
    rep.count("shards", out.shards.len()).count("records", out.index.len()).count("skipped", out.skipped.len()).line(
        format!(
            "{} records in {} shards under {}; {} skipped",
            out.index.len(),
            out.shards.len(),
            layout.shards().display(),
            out.skipped.len()
        ),
    );
    rep.partial = !out.skipped.is_empty();
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelLine {
    pub id: String,
    pub label: String,
}

pub fn sample(cfg: &PipelineConfig) -> Result<StageReport> {
    let layout = Layout::new(&cfg.paths.root);
    let records = read_dataset(&layout)?;
    cfg.sampler.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.stage_seed("sample"));
    let labels: Vec<LabelLine> = sample_manifest(&records, &cfg.sampler, &mut rng)?
        .into_iter()
        .map(|(id, label)| LabelLine { id, label })
        .collect();
    jsonl::write(&layout.labels(), &labels)?;
    let from_alt = labels
        .iter()
        .zip(records.iter().filter(|r| !r.excluded))
        .filter(|(l, r)| r.alt_texts.contains(&l.label))
        .count();
    let mut rep = StageReport::new("sample");
    rep.count("labels", labels.len()).line(format!("{} labels drawn ({from_alt} match an alt text)", labels.len()));
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub best_accuracy: f64,
    pub variants: Vec<crate::eval::ProtocolReport>,
    pub retrieval: Option<crate::eval::RetrievalReport>,
}

pub fn eval_stage(cfg: &PipelineConfig) -> Result<StageReport> {
    use crate::eval::{multi_name_best, retrieval_recall1, EvalSpec, LookupEncoder, RetrievalSpec};
    let layout = Layout::new(&cfg.paths.root);
    if cfg.eval.specs.is_empty() {
        return Err(Error::Config("eval.specs: no evaluation spec configured".into()));
    }
    let enc_path =
        cfg.eval.encoder.as_ref().ok_or_else(|| Error::Config("eval.encoder: no embedding file configured".into()))?;
    let encoder = LookupEncoder::load(enc_path)?;
    let read_json = |p: &Path| -> Result<Vec<u8>> { std::fs::read(p).map_err(|e| Error::file(p, e)) };
    let variants: Vec<EvalSpec> =
        cfg.eval.specs.iter().map(|p| Ok(serde_json::from_slice(&read_json(p)?)?)).collect::<Result<_>>()?;
    let (best, reports) = multi_name_best(&variants, &encoder)?;
    let retrieval = match &cfg.eval.retrieval {
        Some(p) => {
            let spec: RetrievalSpec = serde_json::from_slice(&read_json(p)?)?;
            Some(retrieval_recall1(&spec, &encoder)?)
        }
        None => None,
    };
    let report = EvalReport { best_accuracy: best, variants: reports, retrieval };
    let path = layout.eval_report();
    std::fs::create_dir_all(path.parent().unwrap()).map_err(|e| Error::file(&path, e))?;
    std::fs::write(&path, serde_json::to_vec_pretty(&report)?).map_err(|e| Error::file(&path, e))?;
    let mut rep = StageReport::new("eval");
    rep.line(format!("best zero-shot accuracy {:.4} over {} variants", best, report.variants.len()));
    if let Some(r) = &report.retrieval {
        rep.line(format!("retrieval recall@1 {:.4}", r.average));
    }
    Ok(rep)
}

pub mod dry_run;

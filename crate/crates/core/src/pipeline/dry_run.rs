//! Offline end-to-end run against local fixtures: a SPARQL endpoint over a
//! small fixture graph, canned LLM answers, both search APIs and a synthetic
//! web, all served from 127.0.0.1.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::TimeZone;

use super::{Layout, Services, StageReport};
use crate::config::{LlmBackendConfig, PipelineConfig};
use crate::curate::{describe_bytes, write_descriptor_cache, DescriptorBackend, DescriptorSet, GrayscaleBackend};
use crate::error::{Error, Result};
use crate::http::{ClientConfig, HttpClient, UreqClient};
use crate::kg::fixture::FixtureGraph;
use crate::kg::HttpSparqlEndpoint;
use crate::llm::LlmBackend;
use crate::mock::{bundled, start_world, FixtureLlm, LlmFixture, MockServer, SyntheticWeb};
use crate::ratelimit::RetryPolicy;
use crate::search::{BingEngine, Engine, GoogleEngine, ImageSearchEngine};

/// Synthetic-web images that double as evaluation images, so some
/// harvested images are flagged as leaks.
pub const EVAL_IMAGES: [u64; 3] = [21, 81, 141];

pub struct DryRun {
    pub config: PipelineConfig,
    pub stages: Vec<StageReport>,
    /// `stage -> count name -> value`, also written to `dry_run_counts.json`.
    pub counts: BTreeMap<String, BTreeMap<String, u64>>,
    pub requests_served: usize,
}

impl DryRun {
    pub fn partial(&self) -> bool {
        self.stages.iter().any(|s| s.partial)
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<PathBuf> {
    std::fs::write(path, bytes).map_err(|e| Error::file(path, e))?;
    Ok(path.to_path_buf())
}

/// Fixture files plus the config pointing at them and at `server`.
pub fn prepare(dir: &Path, server: &MockServer, seed: u64) -> Result<PipelineConfig> {
    let fx = dir.join("fixtures");
    std::fs::create_dir_all(&fx).map_err(|e| Error::file(&fx, e))?;
    let web = SyntheticWeb::default();
    let backend = GrayscaleBackend::default();
    let mut eval_set = DescriptorSet::new(backend.id(), backend.dim());
    for n in EVAL_IMAGES {
        let bytes = web.image_bytes(n).expect("eval images are planted as plain images");
        eval_set.insert(format!("eval{n}"), describe_bytes(&backend, &bytes)?)?;
    }
    let eval_descriptors = fx.join("eval_descriptors.bin");
    write_descriptor_cache(&eval_descriptors, &eval_set)?;

    let mut cfg = PipelineConfig { seed, ..PipelineConfig::default() };
    cfg.paths.root = dir.join("run");
    cfg.paths.super_entities = Some(write(&fx.join("super_entities.json"), bundled::SUPER_ENTITIES.as_bytes())?);
    cfg.paths.wordnet = Some(write(&fx.join("wordnet.json"), bundled::WORDNET.as_bytes())?);
    cfg.paths.profanity = Some(write(&fx.join("blocklist.txt"), bundled::BLOCKLIST.as_bytes())?);
    cfg.paths.benchmark_terms = Some(write(&fx.join("benchmark_terms.txt"), bundled::BENCHMARK_TERMS.as_bytes())?);
    cfg.kg.endpoint = server.sparql_url();
    cfg.attrs.popularity_cutoff = 100;
    cfg.attrs.backends = ["alpha", "beta"]
        .iter()
        .map(|id| LlmBackendConfig {
            id: id.to_string(),
            base_url: "fixture://llm".into(),
            model: "fixture".into(),
            api_key: None,
        })
        .collect();
    cfg.search.default_engine = Engine::Bing;
    cfg.search.living_engine = Some(Engine::Google);
    cfg.search.qps = 0.0;
    cfg.search.backoff_ms = 0;
    cfg.search.workers = 4;
    cfg.search.google_endpoint = server.google_url();
    cfg.search.bing_endpoint = server.bing_url();
    cfg.search.google_api_key = Some("dry-run-key".into());
    cfg.search.google_cse_id = Some("dry-run-cx".into());
    cfg.search.bing_api_key = Some("dry-run-key".into());
    cfg.harvest.workers = 8;
    cfg.harvest.host_delay_ms = 0;
    cfg.harvest.retries = 2;
    cfg.harvest.backoff_ms = 0;
    cfg.harvest.timeout_secs = 10;
    cfg.harvest.fixed_timestamp = Some(chrono::Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap());
    cfg.curate.eval_descriptors = Some(eval_descriptors);
    cfg.shard.size = 50;
    cfg.eval.specs = vec![write(&fx.join("eval_spec.json"), bundled::EVAL_SPEC.as_bytes())?];
    cfg.eval.encoder = Some(write(&fx.join("eval_encoder.json"), bundled::EVAL_ENCODER.as_bytes())?);
    let mut portable = cfg.clone();
    portable.relative_to(dir);
    write(&dir.join("dry-run.toml"), portable.to_toml()?.as_bytes())?;
    Ok(cfg)
}

/// Services talking to `server`, with the canned LLM in place of a chat API.
pub fn services(cfg: &PipelineConfig) -> Services {
    let http: Arc<dyn HttpClient> = Arc::new(UreqClient::new(ClientConfig {
        timeout: std::time::Duration::from_secs(cfg.harvest.timeout_secs),
        ..ClientConfig::default()
    }));
    let retry = RetryPolicy { initial_backoff: std::time::Duration::ZERO, ..RetryPolicy::default() };
    let sparql = Arc::new(HttpSparqlEndpoint::new(cfg.kg.endpoint.clone(), http.clone(), retry));
    let fixture = Arc::new(LlmFixture::bundled());
    let llms = cfg
        .attrs
        .backends
        .iter()
        .map(|b| Arc::new(FixtureLlm::new(&b.id, fixture.clone())) as Arc<dyn LlmBackend>)
        .collect();
    let key = |k: &Option<String>| k.clone().unwrap_or_default();
    let engines: Vec<Arc<dyn ImageSearchEngine>> = vec![
        Arc::new(BingEngine::new(&cfg.search.bing_endpoint, key(&cfg.search.bing_api_key))),
        Arc::new(GoogleEngine::new(
            &cfg.search.google_endpoint,
            key(&cfg.search.google_api_key),
            key(&cfg.search.google_cse_id),
        )),
    ];
    Services { sparql, llms, http, engines, descriptor: Arc::new(GrayscaleBackend::default()) }
}

/// Run every stage in order.
pub fn run_stages(cfg: &PipelineConfig, svc: &Services) -> Result<Vec<StageReport>> {
    Ok(vec![
        super::extract(cfg, svc)?,
        super::classify(cfg, svc)?,
        super::attrs(cfg, svc)?,
        super::natural_types(cfg, svc)?,
        super::queries(cfg)?,
        super::search(cfg, svc)?,
        super::harvest_stage(cfg, svc)?,
        super::curate_stage(cfg)?,
        super::dedup(cfg, svc)?,
        super::stats(cfg)?,
        super::shard(cfg)?,
        super::sample(cfg)?,
        super::eval_stage(cfg)?,
    ])
}

/// Start the mock world, run the whole pipeline into `dir`, and record the
/// per-stage counts.
pub fn dry_run(dir: &Path, seed: u64) -> Result<DryRun> {
    let graph = FixtureGraph::from_json(bundled::KG)?;
    let server = start_world(Arc::new(graph.endpoint()?), Arc::new(SyntheticWeb::default()))?;
    let cfg = prepare(dir, &server, seed)?;
    let svc = services(&cfg);
    let stages = run_stages(&cfg, &svc)?;
    let counts: BTreeMap<String, BTreeMap<String, u64>> =
        stages.iter().map(|s| (s.stage.clone(), s.counts.clone())).collect();
    let out = Layout::new(&cfg.paths.root).root.join("dataset/dry_run_counts.json");
    write(&out, &serde_json::to_vec_pretty(&counts)?)?;
    Ok(DryRun { config: cfg, stages, counts, requests_served: server.request_count() })
}

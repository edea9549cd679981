//! Download images, scrape alt texts from hosting pages, and build the
//! content-addressed image manifest.

mod alt;

use std::collections::{HashMap, HashSet};
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::http::{HttpClient, HttpRequest};
use crate::jsonl::{self, Appender};
use crate::ratelimit::{HostGate, RetryPolicy};
use crate::search::SearchResult;
use crate::text::short_hash;

pub use alt::{alt_texts_in, normalize_url, scrape_alt_texts};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageSource {
    pub image_url: String,
    pub page_url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub image_url: String,
    pub page_url: String,
    pub width: u32,
    pub height: u32,
    pub byte_size: u64,
    pub content_hash: String,
    pub path: String,
    pub alt_texts: Vec<String>,
    pub query_refs: Vec<String>,
    pub result_ids: Vec<String>,
    pub sources: Vec<ImageSource>,
    pub fetched_at: DateTime<Utc>,
}

impl ImageRecord {
    pub fn area(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }
}

/// One successfully downloaded and decoded search result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub content_hash: String,
    pub ext: String,
    pub width: u32,
    pub height: u32,
    pub byte_size: u64,
    pub image_url: String,
    pub page_url: String,
    pub query_ref: String,
    pub alt_texts: Vec<String>,
    pub fetched_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Ok(Observation),
    Failed { stage: String, reason: String },
    Quarantined { reason: String, content_hash: String },
}

/// Checkpoint line: everything needed to rebuild the manifest offline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarvestEntry {
    pub result_id: String,
    pub image_url: String,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub result_id: String,
    pub image_url: String,
    pub stage: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantineRecord {
    pub result_id: String,
    pub image_url: String,
    pub content_hash: String,
    pub reason: String,
}

pub fn result_id(r: &SearchResult) -> String {
    format!("r{}", short_hash(&[&r.query_ref, &r.image_url, &r.page_url, &r.raw_rank.to_string()]))
}

#[derive(Debug, Clone)]
pub struct HarvestConfig {
    pub workers: usize,
    /// Minimum spacing between request starts to one host.
    pub host_delay: Duration,
    pub retry: RetryPolicy,
    pub max_image_bytes: usize,
    /// Also keep the title or snippet the search engine returned.
    pub use_engine_snippets: bool,
    /// Fixed timestamp for reproducible manifests.
    pub fetched_at: Option<DateTime<Utc>>,
}

impl Default for HarvestConfig {
    fn default() -> Self {
        Self {
            workers: 64,
            host_delay: Duration::from_millis(250),
            retry: RetryPolicy {
                max_attempts: 2,
                initial_backoff: Duration::from_millis(500),
                ..RetryPolicy::default()
            },
            max_image_bytes: 20 * 1024 * 1024,
            use_engine_snippets: false,
            fetched_at: None,
        }
    }
}

/// Output layout under the harvest directory.
#[derive(Debug, Clone)]
pub struct HarvestPaths {
    pub root: PathBuf,
}

impl HarvestPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn images(&self) -> PathBuf {
        self.root.join("images")
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.jsonl")
    }
    pub fn failures(&self) -> PathBuf {
        self.root.join("failures.jsonl")
    }
    pub fn quarantine(&self) -> PathBuf {
        self.root.join("quarantine.jsonl")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoint.jsonl")
    }
}

/// Relative storage path `images/<hh>/<hash>.<ext>`.
pub fn image_rel_path(content_hash: &str, ext: &str) -> String {
    format!("images/{}/{content_hash}.{ext}", &content_hash[..2])
}

fn store_image(root: &Path, rel: &str, bytes: &[u8]) -> Result<()> {
    let path = root.join(rel);
    if path.exists() {
        return Ok(());
    }
    let dir = path.parent().expect("image path has a parent");
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::file(&tmp, e))?;
    std::fs::rename(&tmp, &path).map_err(|e| Error::file(&path, e))?;
    Ok(())
}

/// Decode enough to trust the bytes: format, dimensions, full pixel decode.
pub fn probe_image(bytes: &[u8]) -> Result<(u32, u32, &'static str)> {
    let reader =
        image::ImageReader::new(Cursor::new(bytes)).with_guessed_format().map_err(|e| Error::Image(e.to_string()))?;
    let format = reader.format().ok_or_else(|| Error::Image("unrecognized format".into()))?;
    let ext = format.extensions_str().first().copied().unwrap_or("bin");
    let img = reader.decode().map_err(|e| Error::Image(e.to_string()))?;
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::Image("zero-sized image".into()));
    }
    Ok((img.width(), img.height(), ext))
}

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn host_key(u: &str) -> String {
    url::Url::parse(u)
        .ok()
        .map(|p| format!("{}:{}", p.host_str().unwrap_or(""), p.port_or_known_default().unwrap_or(0)))
        .unwrap_or_default()
}

struct Harvester<'a> {
    http: &'a dyn HttpClient,
    gate: HostGate,
    config: &'a HarvestConfig,
    root: &'a Path,
}

impl Harvester<'_> {
    fn get(&self, u: &str) -> Result<Vec<u8>> {
        self.config.retry.run(|_| {
            let _permit = self.gate.enter(&host_key(u));
            let resp = self.http.execute(&HttpRequest::get(u))?;
            if !resp.is_success() {
                return Err(Error::Status { status: resp.status, url: u.to_string() });
            }
            Ok(resp.body)
        })
    }

    fn scrape(&self, page_url: &str, image_url: &str) -> Vec<String> {
        let _permit = self.gate.enter(&host_key(page_url));
        scrape_alt_texts(page_url, image_url, self.http)
    }

    /// Download one image URL once and resolve every pending result that
    /// points at it.
    fn process(&self, group: &[&SearchResult]) -> Result<Vec<HarvestEntry>> {
        let image_url = &group[0].image_url;
        let entries = |outcome: &dyn Fn(&SearchResult) -> Outcome| {
            group
                .iter()
                .map(|r| HarvestEntry { result_id: result_id(r), image_url: r.image_url.clone(), outcome: outcome(r) })
                .collect::<Vec<_>>()
        };
        if !image_url.starts_with("http://") && !image_url.starts_with("https://") {
            return Ok(entries(&|_| Outcome::Failed { stage: "download".into(), reason: "not an http(s) url".into() }));
        }
        let bytes = match self.get(image_url) {
            Ok(b) if b.len() > self.config.max_image_bytes => {
                return Ok(entries(&|_| Outcome::Failed {
                    stage: "download".into(),
                    reason: format!("{} bytes exceeds limit", b.len()),
                }))
            }
            Ok(b) => b,
            Err(e) => {
                let reason = e.to_string();
                return Ok(entries(&|_| Outcome::Failed { stage: "download".into(), reason: reason.clone() }));
            }
        };
        let hash = content_hash(&bytes);
        let (width, height, ext) = match probe_image(&bytes) {
            Ok(v) => v,
            Err(e) => {
                let reason = e.to_string();
                return Ok(entries(&|_| Outcome::Quarantined { reason: reason.clone(), content_hash: hash.clone() }));
            }
        };
        store_image(self.root, &image_rel_path(&hash, ext), &bytes)?;
        let fetched_at = self.config.fetched_at.unwrap_or_else(Utc::now);
        let mut alts: HashMap<&str, Vec<String>> = HashMap::new();
        for r in group {
            if !alts.contains_key(r.page_url.as_str()) {
                alts.insert(&r.page_url, self.scrape(&r.page_url, image_url));
            }
        }
        Ok(entries(&|r| {
            let mut alt_texts = alts[r.page_url.as_str()].clone();
            if self.config.use_engine_snippets {
                if let Some(s) = r.snippet.as_deref().map(str::trim).filter(|s| !s.is_empty()) {
                    if !alt_texts.iter().any(|a| a == s) {
                        alt_texts.push(s.to_string());
                    }
                }
            }
            Outcome::Ok(Observation {
                content_hash: hash.clone(),
                ext: ext.to_string(),
                width,
                height,
                byte_size: bytes.len() as u64,
                image_url: r.image_url.clone(),
                page_url: r.page_url.clone(),
                query_ref: r.query_ref.clone(),
                alt_texts,
                fetched_at,
            })
        }))
    }
}

#[derive(Debug, Clone, Default)]
pub struct HarvestReport {
    pub records: Vec<ImageRecord>,
    pub failures: Vec<FailureRecord>,
    pub quarantined: Vec<QuarantineRecord>,
    pub input_results: usize,
    pub from_checkpoint: usize,
}

impl HarvestReport {
    /// Results accounted for by provenance links, failures and quarantine.
    pub fn accounted(&self) -> usize {
        self.records.iter().map(|r| r.result_ids.len()).sum::<usize>() + self.failures.len() + self.quarantined.len()
    }
}

/// Merge per-result observations into one record per content hash, in
/// first-seen order.
pub fn merge_observations(entries: &[HarvestEntry]) -> Vec<ImageRecord> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut out: Vec<ImageRecord> = Vec::new();
    for e in entries {
        let Outcome::Ok(o) = &e.outcome else { continue };
        let i = *index.entry(o.content_hash.clone()).or_insert_with(|| {
            out.push(ImageRecord {
                id: o.content_hash[..16].to_string(),
                image_url: o.image_url.clone(),
                page_url: o.page_url.clone(),
                width: o.width,
                height: o.height,
                byte_size: o.byte_size,
                content_hash: o.content_hash.clone(),
                path: image_rel_path(&o.content_hash, &o.ext),
                alt_texts: Vec::new(),
                query_refs: Vec::new(),
                result_ids: Vec::new(),
                sources: Vec::new(),
                fetched_at: o.fetched_at,
            });
            out.len() - 1
        });
        let rec = &mut out[i];
        for a in &o.alt_texts {
            if !rec.alt_texts.contains(a) {
                rec.alt_texts.push(a.clone());
            }
        }
        if !rec.query_refs.contains(&o.query_ref) {
            rec.query_refs.push(o.query_ref.clone());
        }
        if !rec.result_ids.contains(&e.result_id) {
            rec.result_ids.push(e.result_id.clone());
        }
        let src = ImageSource { image_url: o.image_url.clone(), page_url: o.page_url.clone() };
        if !rec.sources.contains(&src) {
            rec.sources.push(src);
        }
        rec.fetched_at = rec.fetched_at.min(o.fetched_at);
    }
    out
}

/// Harvest every result, resuming from the checkpoint under `paths`.
/// Per-result problems land in the failure or quarantine logs; only I/O
/// errors on the output directory abort the run.
pub fn harvest(
    results: &[SearchResult],
    http: &dyn HttpClient,
    config: &HarvestConfig,
    paths: &HarvestPaths,
) -> Result<HarvestReport> {
    std::fs::create_dir_all(&paths.root).map_err(|e| Error::file(&paths.root, e))?;
    let previous: Vec<HarvestEntry> = jsonl::read_or_empty(&paths.checkpoint())?;
    let done: HashSet<&str> = previous.iter().map(|e| e.result_id.as_str()).collect();

    let mut seen_ids = HashSet::new();
    let unique: Vec<&SearchResult> = results.iter().filter(|r| seen_ids.insert(result_id(r))).collect();
    let mut groups: Vec<Vec<&SearchResult>> = Vec::new();
    let mut group_of: HashMap<String, usize> = HashMap::new();
    for r in unique.iter().filter(|r| !done.contains(result_id(r).as_str())) {
        let key = normalize_url(&r.image_url, None).unwrap_or_else(|| r.image_url.clone());
        let g = *group_of.entry(key).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(r);
    }

    let harvester = Harvester { http, gate: HostGate::new(config.host_delay), config, root: &paths.root };
    let checkpoint = Appender::open(&paths.checkpoint())?;
    let next = AtomicUsize::new(0);
    let fresh: Mutex<HashMap<String, HarvestEntry>> = Mutex::new(HashMap::new());
    let error: Mutex<Option<Error>> = Mutex::new(None);
    std::thread::scope(|s| {
        for _ in 0..config.workers.max(1).min(groups.len().max(1)) {
            s.spawn(|| loop {
                if error.lock().unwrap().is_some() {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(group) = groups.get(i) else { break };
                let res = harvester.process(group).and_then(|entries| {
                    let mut fresh = fresh.lock().unwrap();
                    for e in entries {
                        checkpoint.append(&e)?;
                        fresh.insert(e.result_id.clone(), e);
                    }
                    Ok(())
                });
                if let Err(e) = res {
                    error.lock().unwrap().get_or_insert(e);
                }
            });
        }
    });
    if let Some(e) = error.into_inner().unwrap() {
        return Err(e);
    }

    let mut fresh = fresh.into_inner().unwrap();
    let mut by_id: HashMap<String, HarvestEntry> = previous.into_iter().map(|e| (e.result_id.clone(), e)).collect();
    let from_checkpoint = unique.iter().filter(|r| by_id.contains_key(&result_id(r))).count();
    by_id.extend(fresh.drain());
    let ordered: Vec<HarvestEntry> = unique.iter().filter_map(|r| by_id.remove(&result_id(r))).collect();
    drop(checkpoint);
    let mut stale: Vec<HarvestEntry> = by_id.into_values().collect();
    stale.sort_by(|a, b| a.result_id.cmp(&b.result_id));
    // compacted into result order so reruns reproduce it
    let compact: Vec<&HarvestEntry> = ordered.iter().chain(&stale).collect();
    jsonl::write(&paths.checkpoint(), &compact)?;

    let records = merge_observations(&ordered);
    let mut failures = Vec::new();
    let mut quarantined = Vec::new();
    for e in &ordered {
        match &e.outcome {
            Outcome::Ok(_) => {}
            Outcome::Failed { stage, reason } => failures.push(FailureRecord {
                result_id: e.result_id.clone(),
                image_url: e.image_url.clone(),
                stage: stage.clone(),
                reason: reason.clone(),
            }),
            Outcome::Quarantined { reason, content_hash } => quarantined.push(QuarantineRecord {
                result_id: e.result_id.clone(),
                image_url: e.image_url.clone(),
                content_hash: content_hash.clone(),
                reason: reason.clone(),
            }),
        }
    }
    jsonl::write(&paths.manifest(), &records)?;
    jsonl::write(&paths.failures(), &failures)?;
    jsonl::write(&paths.quarantine(), &quarantined)?;
    Ok(HarvestReport { records, failures, quarantined, input_results: unique.len(), from_checkpoint })
}

pub fn read_manifest(path: &Path) -> Result<Vec<ImageRecord>> {
    if !path.exists() {
        return Err(Error::MissingStage { path: path.to_path_buf(), stage: "harvest" });
    }
    jsonl::read(path)
}

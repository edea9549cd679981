use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{build_request, pages_for, Engine, ImageSearchEngine, SearchClient, SearchResult, GOOGLE_PAGE_SIZE};
use crate::error::{Error, Result};
use crate::jsonl::{self, Appender};
use crate::kg::Entity;
use crate::query::SearchQuery;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchCheckpoint {
    pub query_id: String,
    pub engine: Engine,
    pub status: SearchStatus,
    pub result_count: usize,
    pub requests: u32,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct DispatchConfig {
    pub workers: usize,
    pub default_engine: Engine,
}

impl Default for DispatchConfig {
    fn default() -> Self {
        Self { workers: 8, default_engine: Engine::Bing }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchReport {
    pub queries: usize,
    pub already_complete: usize,
    pub completed: usize,
    pub failed: usize,
    /// Left untouched because the budget ran out or the engine was unusable.
    pub not_attempted: usize,
    pub requests: usize,
    pub results: usize,
    pub budget_exhausted: bool,
    pub fatal_engines: Vec<Engine>,
}

enum Outcome {
    Done(Vec<SearchResult>, u32),
    Failed(String, u32),
    Stopped,
}

/// Run every query not yet marked complete in `checkpoint_path`, appending
/// results to `results_path`. Results are written only once all of a
/// query's pages have succeeded, followed by its checkpoint line.
pub fn dispatch(
    queries: &[SearchQuery],
    entities: &[Entity],
    engines: &[&dyn ImageSearchEngine],
    client: &SearchClient,
    config: &DispatchConfig,
    results_path: &Path,
    checkpoint_path: &Path,
) -> Result<DispatchReport> {
    let done: HashSet<String> = jsonl::read_or_empty::<SearchCheckpoint>(checkpoint_path)?
        .into_iter()
        .filter(|c| c.status == SearchStatus::Complete)
        .map(|c| c.query_id)
        .collect();
    let by_id: HashMap<&str, &Entity> = entities.iter().map(|e| (e.identifier.as_str(), e)).collect();
    let engine_map: HashMap<Engine, &dyn ImageSearchEngine> = engines.iter().map(|e| (e.engine(), *e)).collect();

    let pending: Vec<&SearchQuery> = queries.iter().filter(|q| !done.contains(&q.id)).collect();
    let results_out = Appender::open(results_path)?;
    let checkpoint_out = Appender::open(checkpoint_path)?;

    let report = Mutex::new(DispatchReport {
        queries: queries.len(),
        already_complete: queries.len() - pending.len(),
        ..Default::default()
    });
    let stop_all = AtomicBool::new(false);
    let fatal: Mutex<HashSet<Engine>> = Mutex::new(HashSet::new());
    let next = AtomicUsize::new(0);
    let write_error: Mutex<Option<Error>> = Mutex::new(None);

    let run_one = |q: &SearchQuery| -> Outcome {
        let engine_kind = q.engine_hint.unwrap_or(config.default_engine);
        let Some(engine) = engine_map.get(&engine_kind) else {
            return Outcome::Failed(format!("engine {engine_kind} is not configured"), 0);
        };
        let entity = q.entity_id.as_deref().and_then(|id| by_id.get(id).copied());
        let mut results = Vec::new();
        let mut requests = 0;
        for page in 1..=pages_for(q.kind, engine_kind) {
            if stop_all.load(Ordering::SeqCst) || fatal.lock().unwrap().contains(&engine_kind) {
                return Outcome::Stopped;
            }
            let req = match build_request(q, engine_kind, page, entity) {
                Ok(r) => r,
                Err(e) => return Outcome::Failed(e.to_string(), requests),
            };
            requests += 1;
            match client.execute(*engine, &req) {
                Ok(r) => {
                    let short = engine_kind == Engine::Google && (r.len() as u32) < GOOGLE_PAGE_SIZE;
                    results.extend(r);
                    if short {
                        break;
                    }
                }
                Err(Error::BudgetExhausted { .. }) => {
                    stop_all.store(true, Ordering::SeqCst);
                    return Outcome::Stopped;
                }
                Err(e @ Error::EngineFatal { .. }) => {
                    log::error!("{e}");
                    fatal.lock().unwrap().insert(engine_kind);
                    return Outcome::Failed(e.to_string(), requests);
                }
                Err(e) => return Outcome::Failed(e.to_string(), requests),
            }
        }
        Outcome::Done(results, requests)
    };

    std::thread::scope(|s| {
        for _ in 0..config.workers.max(1).min(pending.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(q) = pending.get(i) else { break };
                let engine = q.engine_hint.unwrap_or(config.default_engine);
                let outcome = run_one(q);
                let mut rep = report.lock().unwrap();
                let write = |status, count, requests, error| -> Result<()> {
                    checkpoint_out.append(&SearchCheckpoint {
                        query_id: q.id.clone(),
                        engine,
                        status,
                        result_count: count,
                        requests,
                        timestamp: Utc::now(),
                        error,
                    })
                };
                let res = match outcome {
                    Outcome::Done(results, requests) => {
                        rep.completed += 1;
                        rep.requests += requests as usize;
                        rep.results += results.len();
                        results
                            .iter()
                            .try_for_each(|r| results_out.append(r))
                            .and_then(|_| write(SearchStatus::Complete, results.len(), requests, None))
                    }
                    Outcome::Failed(err, requests) => {
                        log::warn!("query {} ({}) failed: {err}", q.id, q.text);
                        rep.failed += 1;
                        rep.requests += requests as usize;
                        write(SearchStatus::Failed, 0, requests, Some(err))
                    }
                    Outcome::Stopped => {
                        rep.not_attempted += 1;
                        Ok(())
                    }
                };
                if let Err(e) = res {
                    write_error.lock().unwrap().get_or_insert(e);
                    stop_all.store(true, Ordering::SeqCst);
                }
            });
        }
    });

    if let Some(e) = write_error.into_inner().unwrap() {
        return Err(e);
    }
    let mut report = report.into_inner().unwrap();
    report.budget_exhausted = stop_all.load(Ordering::SeqCst);
    let mut fatal: Vec<Engine> = fatal.into_inner().unwrap().into_iter().collect();
    fatal.sort();
    report.fatal_engines = fatal;
    Ok(report)
}

/// Results file with duplicates from interrupted runs removed.
pub fn read_results(path: &Path) -> Result<Vec<SearchResult>> {
    let mut seen = HashSet::new();
    Ok(jsonl::read_or_empty::<SearchResult>(path)?
        .into_iter()
        .filter(|r| seen.insert((r.query_ref.clone(), r.image_url.clone(), r.raw_rank)))
        .collect())
}

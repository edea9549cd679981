//! Image-search adapters, paging rules, cost accounting and dispatch.

mod dispatch;
mod engine;

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::Entity;
use crate::query::{QueryKind, SearchQuery};

pub use crate::query::Engine;
pub use dispatch::{dispatch, read_results, DispatchConfig, DispatchReport, SearchCheckpoint, SearchStatus};
pub use engine::{BingEngine, GoogleEngine, ImageSearchEngine, SearchClient, BING_ENDPOINT, GOOGLE_ENDPOINT};

pub const GOOGLE_MAX_PAGES: u32 = 10;
pub const GOOGLE_PAGE_SIZE: u32 = 10;
pub const BING_COUNT: u32 = 150;
pub const GOOGLE_EXCLUDE_TERMS: &str = "drawing clipart illustration cartoon vector painting";

pub const GOOGLE_CALL_MICROS: u64 = 5_000;
pub const BING_CALL_MICROS: u64 = 18_000;

/// An encoded request. `params` excludes credentials, which are added by
/// the engine when the request is sent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchRequest {
    pub query_id: String,
    pub kind: QueryKind,
    pub engine: Engine,
    pub page: u32,
    pub params: Vec<(String, String)>,
}

impl SearchRequest {
    pub fn query_string(&self) -> String {
        url::form_urlencoded::Serializer::new(String::new()).extend_pairs(self.params.iter()).finish()
    }

    pub fn param(&self, key: &str) -> Option<&str> {
        self.params.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    pub image_url: String,
    pub page_url: String,
    pub engine: Engine,
    pub raw_rank: u32,
    pub query_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snippet: Option<String>,
}

/// Pages requested per query.
pub fn pages_for(kind: QueryKind, engine: Engine) -> u32 {
    match engine {
        Engine::Bing => 1,
        Engine::Google => match kind {
            QueryKind::Entity => 2,
            QueryKind::EntityAttribute => 4,
            QueryKind::NaturalTypeAttribute => 10,
        },
    }
}

fn or_terms(query: &SearchQuery, entity: Option<&Entity>) -> Option<String> {
    if query.kind == QueryKind::NaturalTypeAttribute {
        return None;
    }
    let e = entity?;
    let terms: Vec<&str> = e
        .aliases
        .iter()
        .map(String::as_str)
        .chain(e.natural_type.as_deref())
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .collect();
    (!terms.is_empty()).then(|| terms.join(" "))
}

pub fn build_google_request(query: &SearchQuery, page: u32, entity: Option<&Entity>) -> Result<SearchRequest> {
    if !(1..=GOOGLE_MAX_PAGES).contains(&page) {
        return Err(Error::Argument(format!("google page {page} outside 1..={GOOGLE_MAX_PAGES}")));
    }
    let start = 1 + GOOGLE_PAGE_SIZE * (page - 1);
    let mut params: Vec<(String, String)> = [
        ("q", query.text.clone()),
        ("searchType", "image".into()),
        ("num", GOOGLE_PAGE_SIZE.to_string()),
        ("start", start.to_string()),
        ("imgColorType", "color".into()),
        ("imgType", "photo".into()),
        ("lr", "lang-en".into()),
        ("excludeTerms", GOOGLE_EXCLUDE_TERMS.into()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    if let Some(t) = or_terms(query, entity) {
        params.push(("orTerms".into(), t));
    }
    Ok(SearchRequest { query_id: query.id.clone(), kind: query.kind, engine: Engine::Google, page, params })
}

pub fn build_bing_request(query: &SearchQuery, entity: Option<&Entity>) -> SearchRequest {
    let mut q = query.text.clone();
    if query.kind != QueryKind::NaturalTypeAttribute {
        if let Some(t) = entity.and_then(|e| e.natural_type.as_deref()).map(str::trim).filter(|t| !t.is_empty()) {
            q = format!("{q} {t}");
        }
    }
    let params = [
        ("q", q),
        ("imageType", "Photo".into()),
        ("color", "ColorOnly".into()),
        ("count", BING_COUNT.to_string()),
        ("offset", "0".into()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    SearchRequest { query_id: query.id.clone(), kind: query.kind, engine: Engine::Bing, page: 1, params }
}

pub fn build_request(query: &SearchQuery, engine: Engine, page: u32, entity: Option<&Entity>) -> Result<SearchRequest> {
    match engine {
        Engine::Google => build_google_request(query, page, entity),
        Engine::Bing if page == 1 => Ok(build_bing_request(query, entity)),
        Engine::Bing => Err(Error::Argument(format!("bing requests a single page, not page {page}"))),
    }
}

pub fn unit_cost_micros(engine: Engine) -> u64 {
    match engine {
        Engine::Google => GOOGLE_CALL_MICROS,
        Engine::Bing => BING_CALL_MICROS,
    }
}

/// Format micro-dollars as dollars with cents, rounding half up.
pub fn format_usd(micros: u64) -> String {
    let cents = (micros + 5_000) / 10_000;
    format!("${}.{:02}", cents / 100, cents % 100)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub google_calls: u64,
    pub bing_calls: u64,
    pub total_usd: f64,
}

#[derive(Debug, Default)]
struct LedgerState {
    google_calls: u64,
    bing_calls: u64,
    reserved_micros: u64,
}

/// Billed-call counter. Money is tracked in integer micro-dollars so the
/// total is exact; an optional cap refuses calls that would exceed it.
#[derive(Debug, Default)]
pub struct CostLedger {
    state: Mutex<LedgerState>,
    cap_micros: Option<u64>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_cap_usd(mut self, cap: f64) -> Self {
        self.cap_micros = Some((cap * 1e6).round().max(0.0) as u64);
        self
    }

    pub fn from_snapshot(s: LedgerSnapshot) -> Self {
        let l = Self::new();
        {
            let mut st = l.state.lock().unwrap();
            st.google_calls = s.google_calls;
            st.bing_calls = s.bing_calls;
        }
        l
    }

    fn billed(st: &LedgerState) -> u64 {
        st.google_calls * GOOGLE_CALL_MICROS + st.bing_calls * BING_CALL_MICROS
    }

    /// Hold the cost of one call against the cap.
    pub fn reserve(&self, engine: Engine) -> Result<()> {
        let mut st = self.state.lock().unwrap();
        let cost = unit_cost_micros(engine);
        if let Some(cap) = self.cap_micros {
            if Self::billed(&st) + st.reserved_micros + cost > cap {
                return Err(Error::BudgetExhausted { cap: format_usd(cap) });
            }
        }
        st.reserved_micros += cost;
        Ok(())
    }

    /// Turn a reservation into a billed call.
    pub fn commit(&self, engine: Engine) {
        let mut st = self.state.lock().unwrap();
        st.reserved_micros = st.reserved_micros.saturating_sub(unit_cost_micros(engine));
        match engine {
            Engine::Google => st.google_calls += 1,
            Engine::Bing => st.bing_calls += 1,
        }
    }

    /// Drop a reservation for a call that never reached the server.
    pub fn release(&self, engine: Engine) {
        let mut st = self.state.lock().unwrap();
        st.reserved_micros = st.reserved_micros.saturating_sub(unit_cost_micros(engine));
    }

    pub fn record(&self, engine: Engine) {
        self.reserve(engine).ok();
        self.commit(engine);
    }

    pub fn calls(&self, engine: Engine) -> u64 {
        let st = self.state.lock().unwrap();
        match engine {
            Engine::Google => st.google_calls,
            Engine::Bing => st.bing_calls,
        }
    }

    pub fn total_micros(&self) -> u64 {
        Self::billed(&self.state.lock().unwrap())
    }

    pub fn total_usd(&self) -> String {
        format_usd(self.total_micros())
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        let st = self.state.lock().unwrap();
        LedgerSnapshot {
            google_calls: st.google_calls,
            bing_calls: st.bing_calls,
            total_usd: Self::billed(&st) as f64 / 1e6,
        }
    }
}

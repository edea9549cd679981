use std::sync::Arc;

use serde::Deserialize;

use super::{CostLedger, Engine, SearchRequest, SearchResult};
use crate::error::{Error, Result};
use crate::http::{HttpClient, HttpRequest};
use crate::ratelimit::{RetryPolicy, TokenBucket};

pub const GOOGLE_ENDPOINT: &str = "https://www.googleapis.com/customsearch/v1";
pub const BING_ENDPOINT: &str = "https://api.bing.microsoft.com/v7.0/images/search";

/// One image-search backend: how to put a request on the wire and how to
/// read its answer.
pub trait ImageSearchEngine: Send + Sync {
    fn engine(&self) -> Engine;

    fn to_http(&self, request: &SearchRequest) -> HttpRequest;

    fn parse(&self, request: &SearchRequest, body: &[u8]) -> Result<Vec<SearchResult>>;
}

fn env_var(name: &str) -> Result<String> {
    std::env::var(name)
        .ok()
        .filter(|v| !v.trim().is_empty())
        .ok_or_else(|| Error::Config(format!("environment variable {name} is not set")))
}

fn absolute(u: &str) -> Option<String> {
    let parsed = url::Url::parse(u.trim()).ok()?;
    matches!(parsed.scheme(), "http" | "https").then(|| parsed.to_string())
}

fn with_query(base: &str, query: &str) -> String {
    let sep = if base.contains('?') { '&' } else { '?' };
    format!("{base}{sep}{query}")
}

#[derive(Debug, Clone)]
pub struct GoogleEngine {
    pub base_url: String,
    api_key: String,
    cse_id: String,
}

impl GoogleEngine {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, cse_id: impl Into<String>) -> Self {
        Self { base_url: base_url.into(), api_key: api_key.into(), cse_id: cse_id.into() }
    }

    /// Credentials from `GOOGLE_API_KEY` and `GOOGLE_CSE_ID`.
    pub fn from_env(base_url: Option<&str>) -> Result<Self> {
        Ok(Self::new(base_url.unwrap_or(GOOGLE_ENDPOINT), env_var("GOOGLE_API_KEY")?, env_var("GOOGLE_CSE_ID")?))
    }
}

#[derive(Deserialize)]
struct GoogleResponse {
    #[serde(default)]
    items: Vec<GoogleItem>,
}

#[derive(Deserialize)]
struct GoogleItem {
    link: String,
    image: Option<GoogleImage>,
    snippet: Option<String>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct GoogleImage {
    context_link: Option<String>,
}

impl ImageSearchEngine for GoogleEngine {
    fn engine(&self) -> Engine {
        Engine::Google
    }

    fn to_http(&self, request: &SearchRequest) -> HttpRequest {
        let creds = url::form_urlencoded::Serializer::new(String::new())
            .append_pair("key", &self.api_key)
            .append_pair("cx", &self.cse_id)
            .finish();
        HttpRequest::get(with_query(&self.base_url, &format!("{}&{creds}", request.query_string())))
    }

    fn parse(&self, request: &SearchRequest, body: &[u8]) -> Result<Vec<SearchResult>> {
        let resp: GoogleResponse =
            serde_json::from_slice(body).map_err(|e| Error::Schema(format!("google response: {e}")))?;
        let offset = (request.page - 1) * super::GOOGLE_PAGE_SIZE;
        Ok(resp
            .items
            .into_iter()
            .enumerate()
            .filter_map(|(i, item)| {
                let page = item.image.and_then(|im| im.context_link)?;
                Some(SearchResult {
                    image_url: absolute(&item.link)?,
                    page_url: absolute(&page)?,
                    engine: Engine::Google,
                    raw_rank: offset + i as u32 + 1,
                    query_ref: request.query_id.clone(),
                    snippet: item.snippet,
                })
            })
            .collect())
    }
}

#[derive(Debug, Clone)]
pub struct BingEngine {
    pub base_url: String,
    api_key: String,
}

impl BingEngine {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self { base_url: base_url.into(), api_key: api_key.into() }
    }

    /// Credentials from `BING_API_KEY`.
    pub fn from_env(base_url: Option<&str>) -> Result<Self> {
        Ok(Self::new(base_url.unwrap_or(BING_ENDPOINT), env_var("BING_API_KEY")?))
    }
}

#[derive(Deserialize)]
struct BingResponse {
    #[serde(default)]
    value: Vec<BingItem>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct BingItem {
    content_url: String,
    host_page_url: String,
    name: Option<String>,
}

impl ImageSearchEngine for BingEngine {
    fn engine(&self) -> Engine {
        Engine::Bing
    }

    fn to_http(&self, request: &SearchRequest) -> HttpRequest {
        HttpRequest::get(with_query(&self.base_url, &request.query_string()))
            .header("Ocp-Apim-Subscription-Key", self.api_key.clone())
    }

    fn parse(&self, request: &SearchRequest, body: &[u8]) -> Result<Vec<SearchResult>> {
        let resp: BingResponse =
            serde_json::from_slice(body).map_err(|e| Error::Schema(format!("bing response: {e}")))?;
        Ok(resp
            .value
            .into_iter()
            .enumerate()
            .filter_map(|(i, item)| {
                Some(SearchResult {
                    image_url: absolute(&item.content_url)?,
                    page_url: absolute(&item.host_page_url)?,
                    engine: Engine::Bing,
                    raw_rank: i as u32 + 1,
                    query_ref: request.query_id.clone(),
                    snippet: item.name,
                })
            })
            .collect())
    }
}

/// Sends search requests with rate limiting, retries and billing.
pub struct SearchClient {
    http: Arc<dyn HttpClient>,
    ledger: Arc<CostLedger>,
    google_limiter: TokenBucket,
    bing_limiter: TokenBucket,
    retry: RetryPolicy,
}

impl SearchClient {
    pub fn new(http: Arc<dyn HttpClient>, ledger: Arc<CostLedger>) -> Self {
        Self {
            http,
            ledger,
            google_limiter: TokenBucket::new(3.0, 3),
            bing_limiter: TokenBucket::new(3.0, 3),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_qps(mut self, engine: Engine, qps: f64) -> Self {
        let bucket = TokenBucket::new(qps, qps.ceil().max(1.0) as u32);
        match engine {
            Engine::Google => self.google_limiter = bucket,
            Engine::Bing => self.bing_limiter = bucket,
        }
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    /// Every attempt that gets an HTTP response is billed, including error
    /// statuses. Auth and quota rejections are fatal for the engine.
    pub fn execute(&self, engine: &dyn ImageSearchEngine, request: &SearchRequest) -> Result<Vec<SearchResult>> {
        let kind = engine.engine();
        let limiter = match kind {
            Engine::Google => &self.google_limiter,
            Engine::Bing => &self.bing_limiter,
        };
        let http = engine.to_http(request);
        self.retry.run(|_| {
            self.ledger.reserve(kind)?;
            limiter.acquire();
            let resp = match self.http.execute(&http) {
                Ok(r) => r,
                Err(e) => {
                    self.ledger.release(kind);
                    return Err(e);
                }
            };
            self.ledger.commit(kind);
            match resp.status {
                200..=299 => engine.parse(request, &resp.body),
                401 | 403 => Err(Error::EngineFatal {
                    engine: kind.to_string(),
                    reason: format!("http {} (credentials or quota)", resp.status),
                }),
                status => Err(Error::Status { status, url: redact(&http.url) }),
            }
        })
    }
}

fn redact(u: &str) -> String {
    u.split('?').next().unwrap_or(u).to_string()
}

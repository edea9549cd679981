//! Localhost mock of every external service the pipeline talks to: a SPARQL
//! endpoint, both image-search APIs, and a small synthetic web of pages and
//! images with planted failures.
//!
//! The server binds `127.0.0.1` on an ephemeral port. Page URLs use the
//! `localhost` spelling so per-host politeness sees two distinct hosts.

use std::collections::HashMap;
use std::io::Cursor;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use image::{ImageFormat, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::kg::OxigraphEndpoint;
use crate::llm::{LlmBackend, LlmRequest, LlmTask};
use crate::search::Engine;
use crate::text::{casefold, short_hash};

pub const SPARQL_PATH: &str = "/sparql";
pub const GOOGLE_PATH: &str = "/google/customsearch/v1";
pub const BING_PATH: &str = "/bing/v7.0/images/search";

#[derive(Debug, Clone)]
pub struct MockResponse {
    pub status: u16,
    pub content_type: String,
    pub body: Vec<u8>,
}

impl MockResponse {
    pub fn new(status: u16, content_type: &str, body: impl Into<Vec<u8>>) -> Self {
        Self { status, content_type: content_type.to_string(), body: body.into() }
    }

    pub fn html(body: impl Into<String>) -> Self {
        Self::new(200, "text/html; charset=utf-8", body.into())
    }

    pub fn json(value: &serde_json::Value) -> Self {
        Self::new(200, "application/json", value.to_string())
    }

    pub fn png(bytes: Vec<u8>) -> Self {
        Self::new(200, "image/png", bytes)
    }

    pub fn status(status: u16) -> Self {
        Self::new(status, "text/plain", format!("status {status}"))
    }
}

#[derive(Debug, Clone)]
pub struct MockRequest {
    pub method: String,
    pub host: String,
    pub port: u16,
    pub path: String,
    pub query: Vec<(String, String)>,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl MockRequest {
    pub fn param(&self, key: &str) -> Option<&str> {
        self.query.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }

    /// Absolute URL on the image host.
    pub fn image_url(&self, path: &str) -> String {
        format!("http://127.0.0.1:{}{path}", self.port)
    }

    /// Absolute URL on the page host.
    pub fn page_url(&self, path: &str) -> String {
        format!("http://localhost:{}{path}", self.port)
    }
}

#[derive(Debug, Clone)]
pub struct LoggedRequest {
    pub at: Instant,
    pub finished: Instant,
    pub method: String,
    pub host: String,
    pub path: String,
    pub status: u16,
}

/// A handler answers the requests it recognizes and passes on the rest.
pub type Handler = Arc<dyn Fn(&MockRequest) -> Option<MockResponse> + Send + Sync>;

pub struct MockServer {
    server: Arc<tiny_http::Server>,
    port: u16,
    log: Arc<Mutex<Vec<LoggedRequest>>>,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

fn split_host(h: &str) -> String {
    h.rsplit_once(':').map(|(host, _)| host).unwrap_or(h).to_ascii_lowercase()
}

fn to_mock_request(req: &mut tiny_http::Request, port: u16) -> MockRequest {
    let headers: Vec<(String, String)> =
        req.headers().iter().map(|h| (h.field.as_str().to_string(), h.value.as_str().to_string())).collect();
    let host =
        headers.iter().find(|(k, _)| k.eq_ignore_ascii_case("host")).map(|(_, v)| split_host(v)).unwrap_or_default();
    let raw = req.url().to_string();
    let (path, qs) = raw.split_once('?').unwrap_or((raw.as_str(), ""));
    let query = url::form_urlencoded::parse(qs.as_bytes()).into_owned().collect();
    let mut body = Vec::new();
    let _ = req.as_reader().read_to_end(&mut body);
    MockRequest { method: req.method().as_str().to_string(), host, port, path: path.to_string(), query, headers, body }
}

impl MockServer {
    pub fn start(handlers: Vec<Handler>) -> Result<Self> {
        Self::start_with_threads(handlers, 8)
    }

    pub fn start_with_threads(handlers: Vec<Handler>, threads: usize) -> Result<Self> {
        let bind = |e: &dyn std::fmt::Display| Error::Config(format!("mock server failed to bind: {e}"));
        let listener = std::net::TcpListener::bind("127.0.0.1:0").map_err(|e| bind(&e))?;
        // accepted sockets inherit this; without it every response whose
        // body follows the headers in a second write stalls on delayed ACK
        socket2::SockRef::from(&listener).set_nodelay(true).map_err(|e| bind(&e))?;
        let server = tiny_http::Server::from_listener(listener, None).map_err(|e| bind(&e))?;
        let port = server
            .server_addr()
            .to_ip()
            .map(|a| a.port())
            .ok_or_else(|| Error::Config("mock server has no ip address".into()))?;
        let server = Arc::new(server);
        let log = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let handlers = Arc::new(handlers);
        let threads = (0..threads.max(1))
            .map(|_| {
                let server = server.clone();
                let log = log.clone();
                let stop = stop.clone();
                let handlers = handlers.clone();
                std::thread::spawn(move || loop {
                    let Ok(mut req) = server.recv() else { break };
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let at = Instant::now();
                    let mreq = to_mock_request(&mut req, port);
                    let resp = handlers.iter().find_map(|h| h(&mreq)).unwrap_or_else(|| MockResponse::status(404));
                    let status = resp.status;
                    let header = tiny_http::Header::from_bytes("Content-Type", resp.content_type.as_bytes())
                        .expect("valid content type header");
                    log.lock().unwrap().push(LoggedRequest {
                        at,
                        finished: Instant::now(),
                        method: mreq.method,
                        host: mreq.host,
                        path: mreq.path,
                        status,
                    });
                    let _ = req.respond(
                        tiny_http::Response::from_data(resp.body).with_status_code(status).with_header(header),
                    );
                })
            })
            .collect();
        Ok(Self { server, port, log, stop, threads })
    }

    pub fn port(&self) -> u16 {
        self.port
    }

    pub fn base_url(&self) -> String {
        format!("http://127.0.0.1:{}", self.port)
    }

    pub fn alt_base_url(&self) -> String {
        format!("http://localhost:{}", self.port)
    }

    pub fn sparql_url(&self) -> String {
        format!("{}{SPARQL_PATH}", self.base_url())
    }

    pub fn google_url(&self) -> String {
        format!("{}{GOOGLE_PATH}", self.base_url())
    }

    pub fn bing_url(&self) -> String {
        format!("{}{BING_PATH}", self.base_url())
    }

    pub fn requests(&self) -> Vec<LoggedRequest> {
        self.log.lock().unwrap().clone()
    }

    pub fn request_count(&self) -> usize {
        self.log.lock().unwrap().len()
    }

    pub fn clear_log(&self) {
        self.log.lock().unwrap().clear();
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for _ in 0..self.threads.len() {
            self.server.unblock();
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

/// Fixed responses by path.
pub fn routes(map: HashMap<String, MockResponse>) -> Handler {
    Arc::new(move |req| map.get(&req.path).cloned())
}

/// Successive responses for one path; the last one repeats.
pub fn scripted(path: &str, responses: Vec<MockResponse>) -> Handler {
    assert!(!responses.is_empty(), "scripted route needs at least one response");
    let path = path.to_string();
    let state = Mutex::new(0usize);
    Arc::new(move |req| {
        if req.path != path {
            return None;
        }
        let mut i = state.lock().unwrap();
        let r = responses[(*i).min(responses.len() - 1)].clone();
        *i += 1;
        Some(r)
    })
}

/// SPARQL protocol: `query` as a GET parameter or form-encoded POST body.
pub fn sparql_handler(endpoint: Arc<OxigraphEndpoint>) -> Handler {
    Arc::new(move |req| {
        if req.path != SPARQL_PATH {
            return None;
        }
        let query = req.param("query").map(str::to_string).or_else(|| {
            url::form_urlencoded::parse(&req.body).find(|(k, _)| k == "query").map(|(_, v)| v.into_owned())
        });
        let Some(query) = query else {
            return Some(MockResponse::new(400, "text/plain", "missing query"));
        };
        Some(match endpoint.select_bytes(&query) {
            Ok(body) => MockResponse::new(200, "application/sparql-results+json", body),
            Err(e) => MockResponse::new(400, "text/plain", e.to_string()),
        })
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockHit {
    pub image_path: String,
    pub page_path: String,
    pub title: String,
}

/// Ranked hits for a query text.
pub trait SearchIndex: Send + Sync {
    fn hits(&self, engine: Engine, query: &str) -> Vec<MockHit>;
}

/// Both search APIs in their documented JSON shapes. Requests without
/// credentials get a 401.
pub fn search_handler(index: Arc<dyn SearchIndex>) -> Handler {
    Arc::new(move |req| {
        let engine = match req.path.as_str() {
            GOOGLE_PATH => Engine::Google,
            BING_PATH => Engine::Bing,
            _ => return None,
        };
        let q = req.param("q").unwrap_or_default();
        let hits = index.hits(engine, q);
        Some(match engine {
            Engine::Google => {
                if req.param("key").is_none() || req.param("cx").is_none() {
                    return Some(MockResponse::status(401));
                }
                let start: usize = req.param("start").and_then(|s| s.parse().ok()).unwrap_or(1);
                let num: usize = req.param("num").and_then(|s| s.parse().ok()).unwrap_or(10);
                let items: Vec<_> = hits
                    .iter()
                    .skip(start.saturating_sub(1))
                    .take(num)
                    .map(|h| {
                        json!({
                            "link": req.image_url(&h.image_path),
                            "snippet": h.title,
                            "image": {"contextLink": req.page_url(&h.page_path)},
                        })
                    })
                    .collect();
                MockResponse::json(&json!({"kind": "customsearch#search", "items": items}))
            }
            Engine::Bing => {
                if req.header("Ocp-Apim-Subscription-Key").is_none() {
                    return Some(MockResponse::status(401));
                }
                let offset: usize = req.param("offset").and_then(|s| s.parse().ok()).unwrap_or(0);
                let count: usize = req.param("count").and_then(|s| s.parse().ok()).unwrap_or(35);
                let value: Vec<_> = hits
                    .iter()
                    .skip(offset)
                    .take(count)
                    .map(|h| {
                        json!({
                            "contentUrl": req.image_url(&h.image_path),
                            "hostPageUrl": req.page_url(&h.page_path),
                            "name": h.title,
                        })
                    })
                    .collect();
                MockResponse::json(&json!({"_type": "Images", "value": value}))
            }
        })
    })
}

/// Encode a PNG whose content is a 16x16 grid of seeded colour blocks,
/// stretched to `width` x `height`. Equal seeds give near-identical
/// descriptors at any size; different seeds are unrelated.
pub fn pattern_png(seed: u64, width: u32, height: u32) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid: Vec<[u8; 3]> = (0..256).map(|_| rng.gen()).collect();
    let img = RgbImage::from_fn(width, height, |x, y| {
        let gx = (x * 16 / width).min(15);
        let gy = (y * 16 / height).min(15);
        Rgb(grid[(gy * 16 + gx) as usize])
    });
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).expect("png encoding to memory");
    out.into_inner()
}

const ADJECTIVES: &[&str] =
    &["bright", "misty", "quiet", "rusty", "golden", "wild", "small", "early", "sunny", "old", "wet", "tall"];
const NOUNS: &[&str] =
    &["meadow", "harbour", "street", "garden", "forest", "market", "field", "yard", "shore", "valley", "road"];

/// How the synthetic web treats image `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlantedImage {
    Normal { pattern: u64, width: u32, height: u32 },
    NotFound,
    ServerError,
    NotAnImage,
}

/// Deterministic synthetic web used by the dry run: a pool of images, one
/// or two pages per image, and a search index that maps query text to
/// hits by hashing.
#[derive(Debug, Clone)]
pub struct SyntheticWeb {
    pub images: u64,
    pub bing_hits: usize,
    pub google_hits: usize,
}

impl Default for SyntheticWeb {
    fn default() -> Self {
        Self { images: 240, bing_hits: 8, google_hits: 13 }
    }
}

impl SyntheticWeb {
    pub fn planted(&self, n: u64) -> PlantedImage {
        match n % 20 {
            3 => PlantedImage::NotFound,
            8 => PlantedImage::NotAnImage,
            15 if n % 40 == 15 => PlantedImage::ServerError,
            13 => PlantedImage::Normal { pattern: n - 1, width: 128, height: 112 },
            17 => PlantedImage::Normal { pattern: n, width: 320, height: 64 },
            5 if n % 40 == 5 => PlantedImage::Normal { pattern: n, width: 48, height: 48 },
            _ => PlantedImage::Normal { pattern: n, width: 64 + (n % 4) as u32 * 16, height: 64 + (n % 3) as u32 * 8 },
        }
    }

    pub fn image_bytes(&self, n: u64) -> Option<Vec<u8>> {
        match self.planted(n) {
            PlantedImage::Normal { pattern, width, height } => Some(pattern_png(pattern, width, height)),
            _ => None,
        }
    }

    /// Alt text that page `page` attaches to its image.
    pub fn alt_text(&self, n: u64, second_page: bool) -> Option<String> {
        if n % 30 == 29 && !second_page {
            return None;
        }
        if n % 25 == 11 {
            return Some(format!("{} {}", "very long caption".repeat(40), n));
        }
        if n % 25 == 19 && !second_page {
            return Some(format!("{{\"id\": {n}, \"type\": \"thumbnail\"}}"));
        }
        let adj = ADJECTIVES[(n as usize) % ADJECTIVES.len()];
        let noun = NOUNS[(n as usize / 3) % NOUNS.len()];
        Some(if second_page {
            format!("another view of the {adj} {noun}, photo {n}")
        } else {
            format!("{adj} {noun} photo {n}")
        })
    }

    fn page_html(&self, n: u64, second_page: bool) -> String {
        let alt = match self.alt_text(n, second_page) {
            Some(a) => format!(" alt=\"{}\"", a.replace('&', "&amp;").replace('"', "&quot;")),
            None => String::new(),
        };
        let other = (n + 1) % self.images;
        format!(
            "<!doctype html><html><head><title>page {n}</title></head><body>\
             <img src=\"/static/logo.png\" alt=\"site logo\">\
             <p>Gallery</p><img src=\"http://127.0.0.1:PORT/img/{n}.png\"{alt}>\
             <img src=\"/img/{other}.png\" alt=\"related picture {other}\">\
             </body></html>"
        )
    }

    pub fn handler(self: Arc<Self>) -> Handler {
        Arc::new(move |req| {
            if let Some(rest) = req.path.strip_prefix("/img/") {
                let n: u64 = rest.strip_suffix(".png")?.parse().ok()?;
                if n >= self.images {
                    return Some(MockResponse::status(404));
                }
                return Some(match self.planted(n) {
                    PlantedImage::NotFound => MockResponse::status(404),
                    PlantedImage::ServerError => MockResponse::status(503),
                    PlantedImage::NotAnImage => MockResponse::new(200, "image/png", "<html>moved</html>"),
                    PlantedImage::Normal { .. } => MockResponse::png(self.image_bytes(n)?),
                });
            }
            if let Some(rest) = req.path.strip_prefix("/page/") {
                let stem = rest.strip_suffix(".html")?;
                let (num, second) = match stem.strip_suffix('b') {
                    Some(s) => (s, true),
                    None => (stem, false),
                };
                let n: u64 = num.parse().ok()?;
                if n >= self.images {
                    return Some(MockResponse::status(404));
                }
                let html = self.page_html(n, second).replace("PORT", &req.port.to_string());
                return Some(MockResponse::html(html));
            }
            None
        })
    }
}

impl SearchIndex for SyntheticWeb {
    fn hits(&self, engine: Engine, query: &str) -> Vec<MockHit> {
        let seed = u64::from_str_radix(&short_hash(&[engine.as_str(), query])[..12], 16).unwrap_or(0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = match engine {
            Engine::Bing => self.bing_hits,
            Engine::Google => self.google_hits,
        };
        (0..count)
            .map(|i| {
                let n = rng.gen_range(0..self.images);
                let second = rng.gen_bool(0.2);
                MockHit {
                    image_path: format!("/img/{n}.png"),
                    page_path: format!("/page/{n}{}.html", if second { "b" } else { "" }),
                    title: format!("{query} result {}", i + 1),
                }
            })
            .collect()
    }
}

/// Start a server speaking SPARQL over `endpoint`, both search APIs over
/// `web`, and serving `web`'s pages and images.
pub fn start_world(endpoint: Arc<OxigraphEndpoint>, web: Arc<SyntheticWeb>) -> Result<MockServer> {
    MockServer::start(vec![sparql_handler(endpoint), search_handler(web.clone()), web.handler()])
}

/// Fixture files bundled into the binary for the dry run.
pub mod bundled {
    pub const KG: &str = include_str!("../data/fixtures/kg.json");
    pub const SUPER_ENTITIES: &str = include_str!("../data/fixtures/super_entities.json");
    pub const WORDNET: &str = include_str!("../data/fixtures/wordnet.json");
    pub const LLM: &str = include_str!("../data/fixtures/llm.json");
    pub const BLOCKLIST: &str = include_str!("../data/fixtures/blocklist.txt");
    pub const BENCHMARK_TERMS: &str = include_str!("../data/fixtures/benchmark_terms.txt");
    pub const EVAL_SPEC: &str = include_str!("../data/fixtures/eval_spec.json");
    pub const EVAL_ENCODER: &str = include_str!("../data/fixtures/eval_encoder.json");
}

/// Canned LLM answers: `attributes[backend][entity name][category label]`
/// holds `(value, search_query)` pairs.
/// Category label to `(value, search query)` answers.
pub type CannedAttributes = HashMap<String, Vec<(String, String)>>;

#[derive(Debug, Clone, Default, Deserialize)]
pub struct LlmFixture {
    #[serde(default)]
    pub non_visual: Vec<String>,
    #[serde(default)]
    /// Backend id, then entity name.
    pub attributes: HashMap<String, HashMap<String, CannedAttributes>>,
    #[serde(default)]
    pub natural_types: HashMap<String, String>,
}

impl LlmFixture {
    pub fn bundled() -> Self {
        serde_json::from_str(bundled::LLM).expect("bundled LLM fixture is valid")
    }
}

/// Deterministic LLM backend answering from an [`LlmFixture`]. Unknown
/// entities are visual, have no attributes, and take their nearest
/// ancestor as natural type.
pub struct FixtureLlm {
    id: String,
    data: Arc<LlmFixture>,
    calls: AtomicUsize,
}

impl FixtureLlm {
    pub fn new(id: &str, data: Arc<LlmFixture>) -> Self {
        Self { id: id.to_string(), data, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LlmBackend for FixtureLlm {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &LlmRequest) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let name = casefold(&request.entity_name);
        let answer = match request.task() {
            LlmTask::ClassifyVisual => {
                json!({"visual": !self.data.non_visual.iter().any(|n| casefold(n) == name)})
            }
            LlmTask::Attributes => {
                let items: Vec<_> = self
                    .data
                    .attributes
                    .get(&self.id)
                    .and_then(|by_entity| by_entity.get(&request.entity_name))
                    .and_then(|by_cat| by_cat.get(request.category.as_deref().unwrap_or_default()))
                    .map(|pairs| pairs.iter().map(|(v, q)| json!({"value": v, "search_query": q})).collect())
                    .unwrap_or_default();
                json!({"attributes": items})
            }
            LlmTask::NaturalType => {
                let wanted = self.data.natural_types.get(&request.entity_name);
                let pick = wanted
                    .filter(|w| request.ancestors.iter().any(|a| casefold(a) == casefold(w)))
                    .or_else(|| request.ancestors.first())
                    .cloned()
                    .unwrap_or_default();
                json!({"natural_type": pick, "reason": format!("people usually call a {} a {pick}", request.entity_name)})
            }
        };
        Ok(answer.to_string())
    }
}

/// Wait until `f` holds or `timeout` passes.
pub fn wait_for(timeout: Duration, mut f: impl FnMut() -> bool) -> bool {
    let end = Instant::now() + timeout;
    while Instant::now() < end {
        if f() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(5));
    }
    f()
}

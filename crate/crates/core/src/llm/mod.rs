//! Pluggable LLM backends.
//!
//! Every backend answers an [`LlmRequest`] with a raw text payload; callers
//! parse it against a strict schema with [`ask`]. Schema violations are
//! rejected and retried, never coerced into something usable.

mod cache;
mod prompts;

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::http::{HttpClient, HttpRequest};
use crate::ratelimit::RetryPolicy;

pub use cache::{CachedBackend, ResponseCache};
pub use prompts::PromptTemplates;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmTask {
    ClassifyVisual,
    Attributes,
    NaturalType,
}

impl LlmTask {
    pub fn as_str(self) -> &'static str {
        match self {
            LlmTask::ClassifyVisual => "classify_visual",
            LlmTask::Attributes => "attributes",
            LlmTask::NaturalType => "natural_type",
        }
    }
}

impl fmt::Display for LlmTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Structured request. `prompt` is the rendered template; the other fields
/// let deterministic stubs answer without parsing prompt text.
#[derive(Debug, Clone, Default)]
pub struct LlmRequest {
    pub task: Option<LlmTask>,
    pub entity_id: String,
    pub entity_name: String,
    pub description: String,
    pub aliases: Vec<String>,
    pub category: Option<String>,
    pub ancestors: Vec<String>,
    pub prompt: String,
}

impl LlmRequest {
    pub fn task(&self) -> LlmTask {
        self.task.expect("request built without a task")
    }
}

pub trait LlmBackend: Send + Sync {
    fn id(&self) -> &str;

    fn complete(&self, request: &LlmRequest) -> Result<String>;

    /// Drop any memoized answer for `request`; called after a schema violation.
    fn forget(&self, _request: &LlmRequest) {}
}

impl<T: LlmBackend + ?Sized> LlmBackend for Arc<T> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn complete(&self, request: &LlmRequest) -> Result<String> {
        (**self).complete(request)
    }
    fn forget(&self, request: &LlmRequest) {
        (**self).forget(request)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisualVerdict {
    pub visual: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeItem {
    pub value: String,
    pub search_query: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeResponse {
    pub attributes: Vec<AttributeItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NaturalTypeResponse {
    pub natural_type: String,
    pub reason: String,
}

/// Payload types that know how to reject semantically empty answers.
pub trait Validate {
    fn validate(&self) -> Result<()>;
}

impl Validate for VisualVerdict {
    fn validate(&self) -> Result<()> {
        Ok(())
    }
}

impl Validate for AttributeResponse {
    fn validate(&self) -> Result<()> {
        for item in &self.attributes {
            if item.value.trim().is_empty() || item.search_query.trim().is_empty() {
                return Err(Error::Schema("attribute with empty value or search_query".into()));
            }
        }
        Ok(())
    }
}

impl Validate for NaturalTypeResponse {
    fn validate(&self) -> Result<()> {
        if self.natural_type.trim().is_empty() {
            return Err(Error::Schema("empty natural_type".into()));
        }
        Ok(())
    }
}

pub fn parse_strict<T: DeserializeOwned + Validate>(raw: &str) -> Result<T> {
    let value: T = serde_json::from_str(raw.trim()).map_err(|e| Error::Schema(format!("unparseable response: {e}")))?;
    value.validate()?;
    Ok(value)
}

/// Send `request`, parse the answer, and retry on transport or schema errors.
pub fn ask<T: DeserializeOwned + Validate>(backend: &dyn LlmBackend, request: &LlmRequest, attempts: u32) -> Result<T> {
    let mut last = None;
    for _ in 0..attempts.max(1) {
        match backend.complete(request) {
            Ok(raw) => match parse_strict::<T>(&raw) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log::warn!(
                        "backend {} returned an invalid {} response for {}: {e}",
                        backend.id(),
                        request.task(),
                        request.entity_name
                    );
                    backend.forget(request);
                    last = Some(e);
                }
            },
            Err(e) if e.is_retryable() || matches!(e, Error::Schema(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::Contract("no attempts made".into())))
}

type Responder = dyn Fn(&LlmRequest) -> Option<String> + Send + Sync;

/// Deterministic stub backend. Answers come from a lookup table keyed by
/// `(task, entity name, category)`, falling back to an optional closure.
pub struct LookupBackend {
    id: String,
    table: HashMap<(LlmTask, String, Option<String>), String>,
    fallback: Option<Box<Responder>>,
    calls: AtomicUsize,
}

impl LookupBackend {
    pub fn new(id: impl Into<String>) -> Self {
        Self { id: id.into(), table: HashMap::new(), fallback: None, calls: AtomicUsize::new(0) }
    }

    pub fn with(
        mut self,
        task: LlmTask,
        entity_name: &str,
        category: Option<&str>,
        response: impl Into<String>,
    ) -> Self {
        self.table.insert((task, entity_name.to_string(), category.map(str::to_string)), response.into());
        self
    }

    pub fn with_fallback(mut self, f: impl Fn(&LlmRequest) -> Option<String> + Send + Sync + 'static) -> Self {
        self.fallback = Some(Box::new(f));
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LlmBackend for LookupBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &LlmRequest) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let key = (request.task(), request.entity_name.clone(), request.category.clone());
        if let Some(r) = self.table.get(&key) {
            return Ok(r.clone());
        }
        if let Some(f) = &self.fallback {
            if let Some(r) = f(request) {
                return Ok(r);
            }
        }
        Err(Error::Transport(format!(
            "stub {} has no answer for {} / {}",
            self.id,
            request.task(),
            request.entity_name
        )))
    }
}

/// Adapter for OpenAI-compatible chat-completion endpoints.
pub struct HttpChatBackend {
    id: String,
    base_url: String,
    model: String,
    api_key: Option<String>,
    client: Arc<dyn HttpClient>,
    retry: RetryPolicy,
}

impl HttpChatBackend {
    pub fn new(
        id: impl Into<String>,
        base_url: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        client: Arc<dyn HttpClient>,
    ) -> Self {
        Self {
            id: id.into(),
            base_url: base_url.into(),
            model: model.into(),
            api_key,
            client,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

impl LlmBackend for HttpChatBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &LlmRequest) -> Result<String> {
        let body = serde_json::json!({
            "model": self.model,
            "temperature": 0,
            "response_format": {"type": "json_object"},
            "messages": [{"role": "user", "content": request.prompt}],
        });
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        let payload = serde_json::to_vec(&body)?;
        let response = self.retry.run(|_| {
            let mut req = HttpRequest::post(url.clone(), payload.clone()).header("Content-Type", "application/json");
            if let Some(key) = &self.api_key {
                req = req.header("Authorization", format!("Bearer {key}"));
            }
            let resp = self.client.execute(&req)?;
            if !resp.is_success() {
                return Err(Error::Status { status: resp.status, url: url.clone() });
            }
            Ok(resp)
        })?;
        let value: serde_json::Value = serde_json::from_slice(&response.body)?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Error::Schema("chat completion without message content".into()))
    }
}

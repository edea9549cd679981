use std::sync::Arc;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::http::{HttpClient, HttpRequest};
use crate::ratelimit::RetryPolicy;

/// Anything that evaluates a SPARQL SELECT and returns SPARQL JSON results.
pub trait SparqlEndpoint: Send + Sync {
    fn select(&self, query: &str) -> Result<Value>;
}

impl<T: SparqlEndpoint + ?Sized> SparqlEndpoint for Arc<T> {
    fn select(&self, query: &str) -> Result<Value> {
        (**self).select(query)
    }
}

/// SPARQL protocol over HTTP POST (form-encoded `query=`).
pub struct HttpSparqlEndpoint {
    url: String,
    client: Arc<dyn HttpClient>,
    retry: RetryPolicy,
}

impl HttpSparqlEndpoint {
    pub fn new(url: impl Into<String>, client: Arc<dyn HttpClient>, retry: RetryPolicy) -> Self {
        Self { url: url.into(), client, retry }
    }
}

impl SparqlEndpoint for HttpSparqlEndpoint {
    fn select(&self, query: &str) -> Result<Value> {
        let body =
            url::form_urlencoded::Serializer::new(String::new()).append_pair("query", query).finish().into_bytes();
        let response = self.retry.run(|_| {
            let req = HttpRequest::post(self.url.clone(), body.clone())
                .header("Content-Type", "application/x-www-form-urlencoded")
                .header("Accept", "application/sparql-results+json");
            let resp = self.client.execute(&req)?;
            if resp.is_success() {
                Ok(resp)
            } else {
                Err(Error::Status { status: resp.status, url: self.url.clone() })
            }
        })?;
        serde_json::from_slice(&response.body).map_err(|e| Error::Schema(format!("SPARQL response is not JSON: {e}")))
    }
}

/// In-process endpoint backed by an oxigraph in-memory store. Used for
/// fixture graphs and by the localhost mock server.
pub struct OxigraphEndpoint {
    store: oxigraph::store::Store,
}

impl OxigraphEndpoint {
    pub fn new(store: oxigraph::store::Store) -> Self {
        Self { store }
    }

    pub fn store(&self) -> &oxigraph::store::Store {
        &self.store
    }

    pub fn select_bytes(&self, query: &str) -> Result<Vec<u8>> {
        use oxigraph::sparql::results::QueryResultsFormat;
        let results = self.store.query(query).map_err(|e| Error::Argument(format!("SPARQL evaluation failed: {e}")))?;
        results
            .write(Vec::new(), QueryResultsFormat::Json)
            .map_err(|e| Error::Argument(format!("SPARQL serialization failed: {e}")))
    }
}

impl SparqlEndpoint for OxigraphEndpoint {
    fn select(&self, query: &str) -> Result<Value> {
        Ok(serde_json::from_slice(&self.select_bytes(query)?)?)
    }
}

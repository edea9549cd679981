use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use super::{LlmBackend, LlmRequest};
use crate::error::{Error, Result};

/// Response cache keyed by `(backend id, prompt hash)`.
///
/// With a directory, entries persist as `<dir>/<backend>/<hh>/<hash>.txt`, so
/// reruns cost no backend traffic. Writes go through a temp file and a rename.
pub struct ResponseCache {
    dir: Option<PathBuf>,
    mem: Mutex<HashMap<String, String>>,
    write_lock: Mutex<()>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self { dir: None, mem: Mutex::new(HashMap::new()), write_lock: Mutex::new(()) }
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Self {
        Self { dir: Some(dir.into()), ..Self::in_memory() }
    }

    pub fn key(backend: &str, prompt: &str) -> String {
        let mut h = Sha256::new();
        h.update(backend.as_bytes());
        h.update([0]);
        h.update(prompt.as_bytes());
        hex::encode(h.finalize())
    }

    fn path(&self, backend: &str, key: &str) -> Option<PathBuf> {
        let safe: String =
            backend.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
        self.dir.as_ref().map(|d| d.join(safe).join(&key[..2]).join(format!("{key}.txt")))
    }

    pub fn get(&self, backend: &str, prompt: &str) -> Option<String> {
        let key = Self::key(backend, prompt);
        if let Some(v) = self.mem.lock().unwrap().get(&key) {
            return Some(v.clone());
        }
        let path = self.path(backend, &key)?;
        let text = fs::read_to_string(path).ok()?;
        self.mem.lock().unwrap().insert(key, text.clone());
        Some(text)
    }

    pub fn put(&self, backend: &str, prompt: &str, response: &str) -> Result<()> {
        let key = Self::key(backend, prompt);
        let _guard = self.write_lock.lock().unwrap();
        if let Some(path) = self.path(backend, &key) {
            let parent = path.parent().expect("sharded path has a parent");
            fs::create_dir_all(parent).map_err(|e| Error::file(parent, e))?;
            let tmp = path.with_extension("tmp");
            fs::write(&tmp, response).map_err(|e| Error::file(&tmp, e))?;
            fs::rename(&tmp, &path).map_err(|e| Error::file(&path, e))?;
        }
        self.mem.lock().unwrap().insert(key, response.to_string());
        Ok(())
    }

    pub fn remove(&self, backend: &str, prompt: &str) {
        let key = Self::key(backend, prompt);
        let _guard = self.write_lock.lock().unwrap();
        self.mem.lock().unwrap().remove(&key);
        if let Some(path) = self.path(backend, &key) {
            let _ = fs::remove_file(path);
        }
    }
}

pub struct CachedBackend<B> {
    inner: B,
    cache: std::sync::Arc<ResponseCache>,
}

impl<B: LlmBackend> CachedBackend<B> {
    pub fn new(inner: B, cache: std::sync::Arc<ResponseCache>) -> Self {
        Self { inner, cache }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: LlmBackend> LlmBackend for CachedBackend<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, request: &LlmRequest) -> Result<String> {
        if let Some(hit) = self.cache.get(self.inner.id(), &request.prompt) {
            return Ok(hit);
        }
        let response = self.inner.complete(request)?;
        self.cache.put(self.inner.id(), &request.prompt, &response)?;
        Ok(response)
    }

    fn forget(&self, request: &LlmRequest) {
        self.cache.remove(self.inner.id(), &request.prompt);
        self.inner.forget(request);
    }
}

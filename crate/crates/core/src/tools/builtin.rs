//! Compiled-in tools: `web_search` (cached) and `image_create` (stub).

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{OutputField, ParamLocation, ParamSpec, ParamType, ToolError, ToolSpec};
use crate::clock::Clock;
use crate::kernel::normalize_text;
use crate::memory::fnv1a64;
use crate::net::NetClient;

pub const WEB_SEARCH: &str = "web_search";
pub const IMAGE_CREATE: &str = "image_create";
pub const DEFAULT_SEARCH_TTL_SECS: i64 = 3600;

fn builtin(id: &str, description: &str, param: &str, output: &str) -> ToolSpec {
    ToolSpec {
        tool_id: id.into(),
        name: id.into(),
        description: description.into(),
        endpoint: format!("builtin:{id}"),
        method: "POST".into(),
        params: vec![ParamSpec {
            name: param.into(),
            location: ParamLocation::Body,
            param_type: ParamType::String,
            required: true,
        }],
        output_fields: vec![OutputField {
            name: output.into(),
            field_type: ParamType::String,
        }],
    }
}

pub fn builtin_specs() -> Vec<ToolSpec> {
    vec![
        builtin(
            WEB_SEARCH,
            "Searches the web for a query and returns result text.",
            "query",
            "results",
        ),
        builtin(
            IMAGE_CREATE,
            "Creates an image from a text prompt and returns a reference to it.",
            "prompt",
            "image_ref",
        ),
    ]
}

pub fn is_builtin(tool_id: &str) -> bool {
    tool_id == WEB_SEARCH || tool_id == IMAGE_CREATE
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub result: String,
    pub stored_at: DateTime<Utc>,
}

/// Search with a TTL cache keyed by normalized query. Offline mode serves only
/// the cache and fixtures.
pub struct WebSearch {
    cache: RwLock<BTreeMap<String, CacheEntry>>,
    fixtures: RwLock<BTreeMap<String, String>>,
    ttl: Duration,
    backend: Option<String>,
    net: NetClient,
    clock: Arc<dyn Clock>,
    live_calls: AtomicU64,
    cache_hits: AtomicU64,
}

impl std::fmt::Debug for WebSearch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WebSearch")
            .field("backend", &self.backend)
            .field("ttl", &self.ttl)
            .finish_non_exhaustive()
    }
}

impl WebSearch {
    pub fn new(net: NetClient, clock: Arc<dyn Clock>) -> Self {
        Self {
            cache: RwLock::new(BTreeMap::new()),
            fixtures: RwLock::new(BTreeMap::new()),
            ttl: Duration::seconds(DEFAULT_SEARCH_TTL_SECS),
            backend: None,
            net,
            clock,
            live_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        }
    }

    pub fn with_ttl(mut self, ttl: Duration) -> Self {
        self.ttl = ttl;
        self
    }

    /// Live lookups GET `<backend>?q=<query>` and read `results` from the JSON body.
    pub fn with_backend(mut self, url: impl Into<String>) -> Self {
        self.backend = Some(url.into());
        self
    }

    pub fn add_fixture(&self, query: &str, result: &str) {
        self.fixtures.write().insert(normalize_text(query), result.to_owned());
    }

    pub fn seed_cache(&self, query: &str, result: &str) {
        self.cache.write().insert(
            normalize_text(query),
            CacheEntry {
                result: result.to_owned(),
                stored_at: self.clock.now(),
            },
        );
    }

    pub fn live_calls(&self) -> u64 {
        self.live_calls.load(Ordering::SeqCst)
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::SeqCst)
    }

    pub fn cache_snapshot(&self) -> BTreeMap<String, CacheEntry> {
        self.cache.read().clone()
    }

    pub fn save_cache(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(&*self.cache.read()).expect("cache serializes");
        std::fs::write(path, text)
    }

    pub fn load_cache(&self, path: &Path) -> std::io::Result<()> {
        let text = std::fs::read_to_string(path)?;
        let entries: BTreeMap<String, CacheEntry> =
            serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        self.cache.write().extend(entries);
        Ok(())
    }

    fn fresh(&self, key: &str) -> Option<String> {
        let cache = self.cache.read();
        let entry = cache.get(key)?;
        (self.clock.now() - entry.stored_at < self.ttl).then(|| entry.result.clone())
    }

    pub async fn search(&self, query: &str) -> Result<(String, bool), ToolError> {
        let key = normalize_text(query);
        if let Some(hit) = self.fresh(&key) {
            self.cache_hits.fetch_add(1, Ordering::SeqCst);
            return Ok((hit, true));
        }
        let fixture = self.fixtures.read().get(&key).cloned();
        let result = match fixture {
            Some(result) => result,
            None if self.net.offline() => return Err(ToolError::OfflineCacheMiss(key)),
            None => {
                let backend = self.backend.as_deref().ok_or(ToolError::NoSearchBackend)?;
                self.live_calls.fetch_add(1, Ordering::SeqCst);
                let response = self
                    .net
                    .request(reqwest::Method::GET, backend)?
                    .query(&[("q", query)])
                    .send()
                    .await
                    .map_err(|e| ToolError::Transport(e.to_string()))?;
                let status = response.status();
                let body = response.text().await.map_err(|e| ToolError::Transport(e.to_string()))?;
                if !status.is_success() {
                    return Err(ToolError::UpstreamError {
                        status: status.as_u16(),
                        body,
                    });
                }
                match serde_json::from_str::<Value>(&body) {
                    Ok(Value::Object(map)) => match map.get("results") {
                        Some(Value::String(s)) => s.clone(),
                        Some(other) => other.to_string(),
                        None => body,
                    },
                    _ => body,
                }
            }
        };
        self.cache.write().insert(
            key,
            CacheEntry {
                result: result.clone(),
                stored_at: self.clock.now(),
            },
        );
        Ok((result, false))
    }
}

/// A placeholder reference; no image is generated.
pub fn image_reference(prompt: &str) -> String {
    format!(
        "image://placeholder/{:016x}",
        fnv1a64(normalize_text(prompt).as_bytes())
    )
}

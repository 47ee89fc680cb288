//! Language-model layer: a model pool, prompt templates keyed by task kind,
//! and a schedule that picks the pair for each task.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::normalize_text;
use crate::net::NetClient;

pub const PLACEHOLDER: &str = "{{thought}}";
pub const HTTP_RETRIES: u32 = 2;
pub const HTTP_BACKOFF_BASE: Duration = Duration::from_millis(250);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("model id '{0}' already registered")]
    DuplicateModelId(String),
    #[error("unknown model '{0}'")]
    UnknownModel(String),
    #[error("no models registered")]
    NoModels,
    #[error("template '{0}' must contain {{{{thought}}}} exactly once")]
    InvalidTemplate(String),
    #[error("http model '{0}' has no endpoint")]
    MissingEndpoint(String),
    #[error("model '{0}' is not a scripted model")]
    NotScripted(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    #[error("provider unreachable: {0}")]
    ProviderUnreachable(String),
    #[error("no scripted rule matched and no default completion is set")]
    NoRuleAndNoDefault,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Scripted,
    Http,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub model_id: String,
    pub provider_kind: ProviderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub default: bool,
}

impl ModelDescriptor {
    pub fn scripted(id: impl Into<String>, default: bool) -> Self {
        Self {
            model_id: id.into(),
            provider_kind: ProviderKind::Scripted,
            endpoint: None,
            default,
        }
    }

    pub fn http(id: impl Into<String>, endpoint: impl Into<String>, default: bool) -> Self {
        Self {
            model_id: id.into(),
            provider_kind: ProviderKind::Http,
            endpoint: Some(endpoint.into()),
            default,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Decide,
    Plan,
    Respond,
    LuiLayout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub template_id: String,
    pub model_id: String,
    pub task_kind: TaskKind,
    pub body: String,
}

impl PromptTemplate {
    pub fn new(
        template_id: impl Into<String>,
        model_id: impl Into<String>,
        task_kind: TaskKind,
        body: impl Into<String>,
    ) -> Result<Self, ModelError> {
        let template = Self {
            template_id: template_id.into(),
            model_id: model_id.into(),
            task_kind,
            body: body.into(),
        };
        if template.body.matches(PLACEHOLDER).count() != 1 {
            return Err(ModelError::InvalidTemplate(template.template_id));
        }
        Ok(template)
    }

    fn pass_through(model_id: &str, task_kind: TaskKind) -> Self {
        Self {
            template_id: "pass-through".into(),
            model_id: model_id.into(),
            task_kind,
            body: PLACEHOLDER.into(),
        }
    }
}

/// Substitutes the thought into the template body in a single pass.
pub fn render_prompt(template: &PromptTemplate, thought_text: &str) -> String {
    match template.body.split_once(PLACEHOLDER) {
        Some((head, tail)) => {
            let mut out = String::with_capacity(head.len() + thought_text.len() + tail.len());
            out.push_str(head);
            out.push_str(thought_text);
            out.push_str(tail);
            out
        }
        None => template.body.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedRule {
    pub order: i64,
    pub pattern: String,
    pub completion: String,
}

impl ScriptedRule {
    pub fn new(order: i64, pattern: impl Into<String>, completion: impl Into<String>) -> Self {
        Self {
            order,
            pattern: pattern.into(),
            completion: completion.into(),
        }
    }
}

/// Rule table for the scripted provider.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Script {
    pub rules: Vec<ScriptedRule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub default: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptEntry {
    Rule(ScriptedRule),
    Default { default: String },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptFile {
    Object {
        #[serde(default)]
        rules: Vec<ScriptedRule>,
        #[serde(default)]
        default: Option<String>,
    },
    List(Vec<ScriptEntry>),
}

impl Script {
    pub fn new(rules: Vec<ScriptedRule>, default: Option<String>) -> Self {
        Self { rules, default }
    }

    /// Reads a rules file: either `{"rules": [...], "default": "..."}` or a
    /// list of rules where one entry may be `{"default": "..."}`.
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        match serde_json::from_str::<ScriptFile>(text)? {
            ScriptFile::Object { rules, default } => Ok(Self { rules, default }),
            ScriptFile::List(entries) => {
                let mut script = Script::default();
                for entry in entries {
                    match entry {
                        ScriptEntry::Rule(rule) => script.rules.push(rule),
                        ScriptEntry::Default { default } => script.default = Some(default),
                    }
                }
                Ok(script)
            }
        }
    }

    /// First rule (ascending `order`, then listing order) whose normalized
    /// pattern occurs in the normalized prompt.
    pub fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        let normalized = normalize_text(prompt);
        let mut ordered: Vec<&ScriptedRule> = self.rules.iter().collect();
        ordered.sort_by_key(|r| r.order);
        ordered
            .into_iter()
            .find(|rule| normalized.contains(&normalize_text(&rule.pattern)))
            .map(|rule| rule.completion.clone())
            .or_else(|| self.default.clone())
            .ok_or(ProviderError::NoRuleAndNoDefault)
    }
}

/// Anything that turns a prompt into a completion.
#[async_trait]
pub trait CompletionProvider: Send + Sync {
    async fn complete(&self, prompt: &str) -> Result<String, ProviderError>;
}

#[derive(Debug, Default)]
pub struct ScriptedProvider {
    script: RwLock<Script>,
}

impl ScriptedProvider {
    pub fn new(script: Script) -> Self {
        Self {
            script: RwLock::new(script),
        }
    }

    pub fn set_script(&self, script: Script) {
        *self.script.write() = script;
    }
}

#[async_trait]
impl CompletionProvider for ScriptedProvider {
    async fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        self.script.read().complete(prompt)
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct WireResponse {
    text: String,
}

/// POSTs `{"prompt": ...}` and reads `{"text": ...}`, retrying with
/// exponential backoff.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    endpoint: String,
    net: NetClient,
    backoff_base: Duration,
}

impl HttpProvider {
    pub fn new(endpoint: impl Into<String>, net: NetClient) -> Self {
        Self {
            endpoint: endpoint.into(),
            net,
            backoff_base: HTTP_BACKOFF_BASE,
        }
    }

    pub fn with_backoff_base(mut self, base: Duration) -> Self {
        self.backoff_base = base;
        self
    }

    async fn attempt(&self, prompt: &str) -> Result<String, String> {
        let response = self
            .net
            .request(reqwest::Method::POST, &self.endpoint)
            .map_err(|e| e.to_string())?
            .json(&WireRequest { prompt })
            .send()
            .await
            .map_err(|e| e.to_string())?;
        let status = response.status();
        if !status.is_success() {
            return Err(format!("status {status}"));
        }
        let body: WireResponse = response.json().await.map_err(|e| e.to_string())?;
        Ok(body.text)
    }
}

#[async_trait]
impl CompletionProvider for HttpProvider {
    async fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        let mut last_error = String::new();
        for attempt in 0..=HTTP_RETRIES {
            if attempt > 0 {
                tokio::time::sleep(self.backoff_base * 2u32.pow(attempt - 1)).await;
            }
            match self.attempt(prompt).await {
                Ok(text) => return Ok(text),
                Err(e) => {
                    tracing::warn!(endpoint = %self.endpoint, attempt, "completion failed: {e}");
                    last_error = e;
                }
            }
        }
        Err(ProviderError::ProviderUnreachable(format!(
            "{} after {} attempts: {last_error}",
            self.endpoint,
            HTTP_RETRIES + 1
        )))
    }
}

struct ModelEntry {
    descriptor: ModelDescriptor,
    provider: Arc<dyn CompletionProvider>,
    scripted: Option<Arc<ScriptedProvider>>,
    calls: AtomicU64,
}

#[derive(Default)]
struct RegistryInner {
    models: Vec<ModelEntry>,
    templates: BTreeMap<(String, TaskKind), PromptTemplate>,
}

/// The model pool plus template table.
pub struct ModelRegistry {
    inner: RwLock<RegistryInner>,
    net: NetClient,
}

impl std::fmt::Debug for ModelRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelRegistry")
            .field("models", &self.descriptors())
            .finish()
    }
}

impl Default for ModelRegistry {
    fn default() -> Self {
        Self::new(NetClient::default())
    }
}

impl ModelRegistry {
    pub fn new(net: NetClient) -> Self {
        Self {
            inner: RwLock::new(RegistryInner::default()),
            net,
        }
    }

    /// Registers a descriptor with its stock backend: an empty script for
    /// scripted models, an [`HttpProvider`] for http ones.
    pub fn register_model(&self, descriptor: ModelDescriptor) -> Result<(), ModelError> {
        match descriptor.provider_kind {
            ProviderKind::Scripted => {
                let scripted = Arc::new(ScriptedProvider::default());
                self.insert(descriptor, scripted.clone(), Some(scripted))
            }
            ProviderKind::Http => {
                let endpoint = descriptor
                    .endpoint
                    .clone()
                    .ok_or_else(|| ModelError::MissingEndpoint(descriptor.model_id.clone()))?;
                let provider = Arc::new(HttpProvider::new(endpoint, self.net.clone()));
                self.insert(descriptor, provider, None)
            }
        }
    }

    pub fn register_scripted(&self, model_id: &str, default: bool, script: Script) -> Result<(), ModelError> {
        self.register_model(ModelDescriptor::scripted(model_id, default))?;
        self.set_script(model_id, script)
    }

    /// Registers a descriptor backed by a caller-supplied provider.
    pub fn register_provider(
        &self,
        descriptor: ModelDescriptor,
        provider: Arc<dyn CompletionProvider>,
    ) -> Result<(), ModelError> {
        if descriptor.provider_kind == ProviderKind::Http && descriptor.endpoint.is_none() {
            return Err(ModelError::MissingEndpoint(descriptor.model_id));
        }
        self.insert(descriptor, provider, None)
    }

    fn insert(
        &self,
        descriptor: ModelDescriptor,
        provider: Arc<dyn CompletionProvider>,
        scripted: Option<Arc<ScriptedProvider>>,
    ) -> Result<(), ModelError> {
        let mut inner = self.inner.write();
        if inner
            .models
            .iter()
            .any(|m| m.descriptor.model_id == descriptor.model_id)
        {
            return Err(ModelError::DuplicateModelId(descriptor.model_id));
        }
        let becomes_default = descriptor.default || inner.models.is_empty();
        if becomes_default {
            for entry in &mut inner.models {
                entry.descriptor.default = false;
            }
        }
        inner.models.push(ModelEntry {
            descriptor: ModelDescriptor {
                default: becomes_default,
                ..descriptor
            },
            provider,
            scripted,
            calls: AtomicU64::new(0),
        });
        Ok(())
    }

    pub fn set_script(&self, model_id: &str, script: Script) -> Result<(), ModelError> {
        let inner = self.inner.read();
        let entry = inner
            .models
            .iter()
            .find(|m| m.descriptor.model_id == model_id)
            .ok_or_else(|| ModelError::UnknownModel(model_id.into()))?;
        entry
            .scripted
            .as_ref()
            .ok_or_else(|| ModelError::NotScripted(model_id.into()))?
            .set_script(script);
        Ok(())
    }

    pub fn register_template(&self, template: PromptTemplate) -> Result<(), ModelError> {
        if template.body.matches(PLACEHOLDER).count() != 1 {
            return Err(ModelError::InvalidTemplate(template.template_id));
        }
        let mut inner = self.inner.write();
        if !inner.models.iter().any(|m| m.descriptor.model_id == template.model_id) {
            return Err(ModelError::UnknownModel(template.model_id));
        }
        inner
            .templates
            .insert((template.model_id.clone(), template.task_kind), template);
        Ok(())
    }

    pub fn lookup(&self, model_id: &str) -> Option<ModelDescriptor> {
        self.inner
            .read()
            .models
            .iter()
            .find(|m| m.descriptor.model_id == model_id)
            .map(|m| m.descriptor.clone())
    }

    pub fn descriptors(&self) -> Vec<ModelDescriptor> {
        self.inner.read().models.iter().map(|m| m.descriptor.clone()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.read().models.is_empty()
    }

    /// Picks the default model and its template for `task_kind`, falling back
    /// to the pass-through template.
    pub fn schedule(&self, task_kind: TaskKind) -> Result<(ModelDescriptor, PromptTemplate), ModelError> {
        let inner = self.inner.read();
        let model = inner
            .models
            .iter()
            .find(|m| m.descriptor.default)
            .ok_or(ModelError::NoModels)?;
        let id = &model.descriptor.model_id;
        let template = inner
            .templates
            .get(&(id.clone(), task_kind))
            .cloned()
            .unwrap_or_else(|| PromptTemplate::pass_through(id, task_kind));
        Ok((model.descriptor.clone(), template))
    }

    pub async fn complete(&self, descriptor: &ModelDescriptor, prompt: &str) -> Result<String, ProviderError> {
        let provider = {
            let inner = self.inner.read();
            let entry = inner
                .models
                .iter()
                .find(|m| m.descriptor.model_id == descriptor.model_id)
                .ok_or_else(|| ModelError::UnknownModel(descriptor.model_id.clone()))?;
            entry.calls.fetch_add(1, Ordering::SeqCst);
            entry.provider.clone()
        };
        provider.complete(prompt).await
    }

    /// Completions requested from one model so far.
    pub fn call_count(&self, model_id: &str) -> u64 {
        self.inner
            .read()
            .models
            .iter()
            .find(|m| m.descriptor.model_id == model_id)
            .map_or(0, |m| m.calls.load(Ordering::SeqCst))
    }

    pub fn total_calls(&self) -> u64 {
        self.inner
            .read()
            .models
            .iter()
            .map(|m| m.calls.load(Ordering::SeqCst))
            .sum()
    }
}

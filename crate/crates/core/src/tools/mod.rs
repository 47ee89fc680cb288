//! Specialist tools: registry, validated direct dispatch, and chain execution.

pub mod builtin;
pub mod openapi;

use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::clock::Clock;
use crate::kernel::{ChainStep, StoreKind};
use crate::memory::{LongTermMemory, MemoryError};
use crate::net::{NetClient, NetError};
use crate::thought_stream::check_chain_bindings;

pub use builtin::{WebSearch, IMAGE_CREATE, WEB_SEARCH};
pub use openapi::{import_openapi, import_openapi_with, ImportOptions};

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("malformed OpenAPI document: {0}")]
    MalformedDocument(String),
    #[error("operation {method} {path} has no operationId")]
    MissingOperationId { path: String, method: String },
    #[error("unsupported parameter '{name}': {detail}")]
    UnsupportedParamType { name: String, detail: String },
    #[error("tool id '{0}' already registered")]
    DuplicateToolId(String),
    #[error("unknown tool '{0}'")]
    UnknownTool(String),
    #[error("missing required parameter '{name}'")]
    MissingRequiredParam { name: String },
    #[error("parameter '{name}' expects {expected}")]
    TypeMismatch { name: String, expected: ParamType },
    #[error("tool does not accept parameter '{name}'")]
    UnknownParam { name: String },
    #[error("upstream returned status {status}")]
    UpstreamError { status: u16, body: String },
    #[error("unknown binding '{0}'")]
    UnknownBinding(String),
    #[error("binding '{bind}' has no field '{field}'")]
    UnknownField { bind: String, field: String },
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error("offline: no cached result for '{0}'")]
    OfflineCacheMiss(String),
    #[error("no web search backend configured")]
    NoSearchBackend,
    #[error("transport error: {0}")]
    Transport(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamLocation {
    Query,
    Body,
    Path,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    String,
    Number,
    Boolean,
}

impl ParamType {
    fn accepts(self, value: &Value) -> bool {
        matches!(
            (self, value),
            (ParamType::String, Value::String(_))
                | (ParamType::Number, Value::Number(_))
                | (ParamType::Boolean, Value::Bool(_))
        )
    }
}

impl std::fmt::Display for ParamType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ParamType::String => "string",
            ParamType::Number => "number",
            ParamType::Boolean => "boolean",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub location: ParamLocation,
    #[serde(rename = "type")]
    pub param_type: ParamType,
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputField {
    pub name: String,
    #[serde(rename = "type")]
    pub field_type: ParamType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub tool_id: String,
    pub name: String,
    pub description: String,
    pub endpoint: String,
    pub method: String,
    pub params: Vec<ParamSpec>,
    pub output_fields: Vec<OutputField>,
}

impl ToolSpec {
    /// Text mirrored into the Tools memory store.
    pub fn memory_text(&self) -> String {
        let params: Vec<String> = self
            .params
            .iter()
            .map(|p| {
                let req = if p.required { "required" } else { "optional" };
                format!("{} ({}, {req})", p.name, p.param_type)
            })
            .collect();
        let mut text = format!("Tool {}: {}. {}", self.tool_id, self.name, self.description);
        if !params.is_empty() {
            text.push_str(" Parameters: ");
            text.push_str(&params.join(", "));
            text.push('.');
        }
        text
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub status: ToolStatus,
    pub fields: BTreeMap<String, Value>,
    pub raw: String,
}

impl ToolResult {
    pub fn error(raw: impl Into<String>) -> Self {
        Self {
            status: ToolStatus::Error,
            fields: BTreeMap::new(),
            raw: raw.into(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ToolStatus::Ok
    }
}

/// Renders a field value as plain text for substitution and display.
pub fn value_text(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

/// Replaces `${bind.field}` placeholders in string arguments, one pass, no
/// re-expansion of substituted text.
pub fn substitute_bindings(
    args: &BTreeMap<String, Value>,
    bindings: &BTreeMap<String, ToolResult>,
) -> Result<BTreeMap<String, Value>, ToolError> {
    let mut out = BTreeMap::new();
    for (name, value) in args {
        let Value::String(text) = value else {
            out.insert(name.clone(), value.clone());
            continue;
        };
        let mut rendered = String::with_capacity(text.len());
        let mut rest = text.as_str();
        while let Some(start) = rest.find("${") {
            let after = &rest[start + 2..];
            let Some(end) = after.find('}') else { break };
            rendered.push_str(&rest[..start]);
            let inner = &after[..end];
            match inner.split_once('.') {
                Some((bind, field)) => {
                    let result = bindings
                        .get(bind)
                        .ok_or_else(|| ToolError::UnknownBinding(bind.to_owned()))?;
                    let value = result.fields.get(field).ok_or_else(|| ToolError::UnknownField {
                        bind: bind.to_owned(),
                        field: field.to_owned(),
                    })?;
                    rendered.push_str(&value_text(value));
                }
                None => {
                    rendered.push_str("${");
                    rendered.push_str(inner);
                    rendered.push('}');
                }
            }
            rest = &after[end + 1..];
        }
        rendered.push_str(rest);
        out.insert(name.clone(), Value::String(rendered));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutcome {
    /// Executed steps in order; when the chain failed the last entry is the
    /// failing step.
    pub completed: Vec<(ChainStep, ToolResult)>,
    pub failed_at: Option<usize>,
}

pub struct ToolRegistry {
    specs: RwLock<Vec<ToolSpec>>,
    net: NetClient,
    web_search: WebSearch,
    invocations: Mutex<BTreeMap<String, u64>>,
}

impl std::fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToolRegistry")
            .field("tools", &self.tool_ids())
            .finish_non_exhaustive()
    }
}

impl ToolRegistry {
    pub fn new(net: NetClient, clock: Arc<dyn Clock>) -> Self {
        let web_search = WebSearch::new(net.clone(), clock);
        Self::with_web_search(net, web_search)
    }

    pub fn with_web_search(net: NetClient, web_search: WebSearch) -> Self {
        Self {
            specs: RwLock::new(builtin::builtin_specs()),
            net,
            web_search,
            invocations: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn web_search(&self) -> &WebSearch {
        &self.web_search
    }

    pub fn register(&self, spec: ToolSpec) -> Result<(), ToolError> {
        let mut specs = self.specs.write();
        if specs.iter().any(|s| s.tool_id == spec.tool_id) {
            return Err(ToolError::DuplicateToolId(spec.tool_id));
        }
        specs.push(spec);
        Ok(())
    }

    pub fn lookup(&self, tool_id: &str) -> Option<ToolSpec> {
        self.specs.read().iter().find(|s| s.tool_id == tool_id).cloned()
    }

    pub fn tool_ids(&self) -> Vec<String> {
        self.specs.read().iter().map(|s| s.tool_id.clone()).collect()
    }

    /// Registered specs excluding the builtins.
    pub fn user_specs(&self) -> Vec<ToolSpec> {
        self.specs
            .read()
            .iter()
            .filter(|s| !builtin::is_builtin(&s.tool_id))
            .cloned()
            .collect()
    }

    /// Dispatches that passed validation, per tool.
    pub fn invocation_count(&self, tool_id: &str) -> u64 {
        self.invocations.lock().get(tool_id).copied().unwrap_or(0)
    }

    pub fn total_invocations(&self) -> u64 {
        self.invocations.lock().values().sum()
    }

    fn validate(spec: &ToolSpec, args: &BTreeMap<String, Value>) -> Result<(), ToolError> {
        for param in &spec.params {
            match args.get(&param.name) {
                None | Some(Value::Null) if param.required => {
                    return Err(ToolError::MissingRequiredParam {
                        name: param.name.clone(),
                    })
                }
                None | Some(Value::Null) => {}
                Some(value) if !param.param_type.accepts(value) => {
                    return Err(ToolError::TypeMismatch {
                        name: param.name.clone(),
                        expected: param.param_type,
                    })
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = args.keys().find(|k| !spec.params.iter().any(|p| &p.name == *k)) {
            return Err(ToolError::UnknownParam { name: extra.clone() });
        }
        Ok(())
    }

    /// Validates and dispatches directly to the named tool.
    pub async fn invoke(&self, tool_id: &str, args: &BTreeMap<String, Value>) -> Result<ToolResult, ToolError> {
        let spec = self
            .lookup(tool_id)
            .ok_or_else(|| ToolError::UnknownTool(tool_id.to_owned()))?;
        Self::validate(&spec, args)?;
        *self.invocations.lock().entry(tool_id.to_owned()).or_default() += 1;

        match tool_id {
            WEB_SEARCH => {
                let query = args.get("query").map(value_text).unwrap_or_default();
                let (results, cached) = self.web_search.search(&query).await?;
                let fields = BTreeMap::from([
                    ("query".to_owned(), Value::String(query)),
                    ("results".to_owned(), Value::String(results.clone())),
                    ("cached".to_owned(), Value::Bool(cached)),
                ]);
                Ok(ToolResult {
                    status: ToolStatus::Ok,
                    fields,
                    raw: results,
                })
            }
            IMAGE_CREATE => {
                let prompt = args.get("prompt").map(value_text).unwrap_or_default();
                let reference = builtin::image_reference(&prompt);
                Ok(ToolResult {
                    status: ToolStatus::Ok,
                    fields: BTreeMap::from([("image_ref".to_owned(), Value::String(reference.clone()))]),
                    raw: reference,
                })
            }
            _ => self.invoke_http(&spec, args).await,
        }
    }

    async fn invoke_http(&self, spec: &ToolSpec, args: &BTreeMap<String, Value>) -> Result<ToolResult, ToolError> {
        let mut url = spec.endpoint.clone();
        let mut query = Vec::new();
        let mut body = Map::new();
        for param in &spec.params {
            let Some(value) = args.get(&param.name).filter(|v| !v.is_null()) else {
                continue;
            };
            match param.location {
                ParamLocation::Path => {
                    let encoded = utf8_percent_encode(&value_text(value), NON_ALPHANUMERIC).to_string();
                    url = url.replace(&format!("{{{}}}", param.name), &encoded);
                }
                ParamLocation::Query => query.push((param.name.clone(), value_text(value))),
                ParamLocation::Body => {
                    body.insert(param.name.clone(), value.clone());
                }
            }
        }
        let method = reqwest::Method::from_bytes(spec.method.as_bytes())
            .map_err(|_| ToolError::Transport(format!("bad method {}", spec.method)))?;
        let mut request = self.net.request(method, &url)?;
        if !query.is_empty() {
            request = request.query(&query);
        }
        if !body.is_empty() {
            request = request.json(&Value::Object(body));
        }
        let response = request.send().await.map_err(|e| ToolError::Transport(e.to_string()))?;
        let status = response.status();
        let raw = response.text().await.map_err(|e| ToolError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(ToolError::UpstreamError {
                status: status.as_u16(),
                body: raw,
            });
        }

        let parsed = serde_json::from_str::<Value>(&raw).ok();
        let object = parsed.as_ref().and_then(Value::as_object);
        let mut fields = BTreeMap::new();
        if spec.output_fields.is_empty() {
            if let Some(object) = object {
                fields.extend(object.iter().map(|(k, v)| (k.clone(), v.clone())));
            }
        } else {
            for field in &spec.output_fields {
                if let Some(value) = object.and_then(|o| o.get(&field.name)) {
                    fields.insert(field.name.clone(), value.clone());
                }
            }
        }
        let complete = spec.output_fields.iter().all(|f| fields.contains_key(&f.name));
        Ok(ToolResult {
            status: if complete { ToolStatus::Ok } else { ToolStatus::Error },
            fields,
            raw,
        })
    }

    /// Runs steps strictly in order; the first failure aborts the chain.
    pub async fn run_chain(&self, plan: &[ChainStep]) -> Result<ChainOutcome, ToolError> {
        if plan.is_empty() {
            return Err(ToolError::InvalidChain("empty plan".into()));
        }
        check_chain_bindings(plan).map_err(ToolError::InvalidChain)?;

        let mut bindings: BTreeMap<String, ToolResult> = BTreeMap::new();
        let mut completed = Vec::with_capacity(plan.len());
        for (index, step) in plan.iter().enumerate() {
            let result = match substitute_bindings(&step.args, &bindings) {
                Ok(args) => match self.invoke(&step.tool_id, &args).await {
                    Ok(result) => result,
                    Err(e) => ToolResult::error(e.to_string()),
                },
                Err(e) => ToolResult::error(e.to_string()),
            };
            let ok = result.is_ok();
            if let (Some(bind), true) = (&step.bind, ok) {
                bindings.insert(bind.clone(), result.clone());
            }
            completed.push((step.clone(), result));
            if !ok {
                return Ok(ChainOutcome {
                    completed,
                    failed_at: Some(index),
                });
            }
        }
        Ok(ChainOutcome {
            completed,
            failed_at: None,
        })
    }
}

/// Registers a tool and mirrors its description into the Tools memory store.
pub fn register_tool(registry: &ToolRegistry, memory: &LongTermMemory, spec: ToolSpec) -> Result<(), ToolError> {
    let text = spec.memory_text();
    let tool_id = spec.tool_id.clone();
    registry.register(spec)?;
    if !memory.contains_doc(StoreKind::Tools, &tool_id) {
        memory.ingest_document(StoreKind::Tools, &tool_id, &text)?;
    }
    Ok(())
}

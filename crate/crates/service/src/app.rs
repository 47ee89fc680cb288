//! The operations shared by the HTTP API and the command line.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Arc;

use mindos_core::clock::{Clock, SystemClock};
use mindos_core::foundation::{ModelDescriptor, ModelError, ModelRegistry, ProviderError, Script};
use mindos_core::kernel::{validate_agent_config, AgentConfig, StoreKind, Trigger};
use mindos_core::lui::{InputEvent, LayoutPlan};
use mindos_core::memory::{LongTermMemory, MemoryError, SearchHit};
use mindos_core::net::NetClient;
use mindos_core::orchestrator::{
    AgentRuntime, Engine, Feedback, SessionError, SessionInfo, SessionMode, WorkflowStore,
};
use mindos_core::tools::openapi::{import_openapi_with, ImportOptions};
use mindos_core::tools::{register_tool, ToolError, ToolSpec};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::{AgentBundle, BundleError};
use crate::settings::Settings;
use crate::storage::{RuntimeOptions, Storage, StorageError};

pub const DEFAULT_MODEL_ID: &str = "default";
/// Used when neither a script nor a model endpoint is configured.
pub const UNCONFIGURED_REPLY: &str = r#"{"action":"respond","text":"No foundation model is configured."}"#;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Tool(#[from] ToolError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl ServiceError {
    /// Stable machine-readable error name.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::Session(e) => match e {
                SessionError::UnknownAgent(_) => "UnknownAgent",
                SessionError::UnknownSession(_) => "UnknownSession",
                SessionError::SessionHalted => "SessionHalted",
                SessionError::WrongMode => "WrongMode",
                SessionError::Provider(ProviderError::ProviderUnreachable(_)) => "ProviderUnreachable",
                SessionError::Provider(_) => "ProviderError",
                SessionError::Invalid(_) => "Invalid",
            },
            ServiceError::Storage(StorageError::NotFound(_)) => "NotFound",
            ServiceError::Storage(StorageError::CorruptState { .. }) => "CorruptState",
            ServiceError::Storage(StorageError::Io(_)) | ServiceError::Io(_) => "Io",
            ServiceError::Bundle(BundleError::VersionUnsupported { .. }) => "VersionUnsupported",
            ServiceError::Bundle(BundleError::Malformed(_)) => "Malformed",
            ServiceError::Tool(e) => match e {
                ToolError::MalformedDocument(_) => "MalformedDocument",
                ToolError::MissingOperationId { .. } => "MissingOperationId",
                ToolError::UnsupportedParamType { .. } => "UnsupportedParamType",
                ToolError::DuplicateToolId(_) => "DuplicateToolId",
                _ => "ToolError",
            },
            ServiceError::Memory(MemoryError::DuplicateDoc { .. }) => "DuplicateDoc",
            ServiceError::Memory(MemoryError::PolicyDenied(_)) => "PolicyDenied",
            ServiceError::Memory(_) => "MemoryError",
            ServiceError::Model(_) => "ModelError",
            ServiceError::InvalidConfig(_) => "InvalidConfig",
            ServiceError::BadRequest(_) => "BadRequest",
        }
    }
}

/// What `GET /agents/{id}` returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentView {
    pub config: AgentConfig,
    pub tools: Vec<ToolSpec>,
    pub knowledge: BTreeMap<String, usize>,
    pub workflows: usize,
}

/// Reply to an event or feedback submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventReply {
    pub outputs: Vec<LayoutPlan>,
    pub session: SessionInfo,
}

/// Builds the model registry described by the settings.
pub fn build_models(settings: &Settings, net: &NetClient) -> Result<ModelRegistry, ServiceError> {
    let models = ModelRegistry::new(net.clone());
    if let Some(url) = &settings.model_url {
        models.register_model(ModelDescriptor::http(DEFAULT_MODEL_ID, url.clone(), true))?;
    } else {
        let script = match &settings.script_file {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                Script::from_json(&text).map_err(|e| ServiceError::BadRequest(format!("{}: {e}", path.display())))?
            }
            None => Script::new(Vec::new(), Some(UNCONFIGURED_REPLY.into())),
        };
        models.register_scripted(DEFAULT_MODEL_ID, true, script)?;
    }
    Ok(models)
}

pub struct Service {
    engine: Engine,
    storage: Storage,
    options: RuntimeOptions,
    persist_locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

impl std::fmt::Debug for Service {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Service")
            .field("root", &self.storage.root())
            .field("engine", &self.engine)
            .finish_non_exhaustive()
    }
}

impl Service {
    pub fn from_settings(settings: &Settings) -> Result<Self, ServiceError> {
        let net = NetClient::new(settings.offline);
        let models = Arc::new(build_models(settings, &net)?);
        let options = RuntimeOptions {
            net,
            clock: Arc::new(SystemClock),
            search_url: settings.search_url.clone(),
        };
        Self::open(settings.data_dir.clone(), models, options)
    }

    /// Opens the data directory and loads every stored agent.
    pub fn open(data_dir: PathBuf, models: Arc<ModelRegistry>, options: RuntimeOptions) -> Result<Self, ServiceError> {
        let storage = Storage::open(data_dir)?;
        let engine = Engine::new(models, options.clock.clone()).with_replay_dir(storage.replay_dir());
        for agent_id in storage.agent_ids()? {
            let agent = storage.load_agent(&agent_id, &options)?;
            engine.add_agent(Arc::new(agent));
        }
        Ok(Self {
            engine,
            storage,
            options,
            persist_locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn storage(&self) -> &Storage {
        &self.storage
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.options.clock
    }

    fn agent(&self, agent_id: &str) -> Result<Arc<AgentRuntime>, ServiceError> {
        Ok(self.engine.agent(agent_id)?)
    }

    /// Writes for one agent are serialized.
    async fn persist(&self, agent: &AgentRuntime) -> Result<(), ServiceError> {
        let lock = self.persist_locks.lock().entry(agent.agent_id()).or_default().clone();
        let _guard = lock.lock().await;
        self.storage.persist_agent(agent)?;
        Ok(())
    }

    pub async fn create_agent(&self, mut config: AgentConfig) -> Result<String, ServiceError> {
        config.agent_id = uuid::Uuid::new_v4().simple().to_string();
        let report = validate_agent_config(&config);
        if !report.is_valid() {
            let text = report
                .violations
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; ");
            return Err(ServiceError::InvalidConfig(text));
        }
        let agent_id = config.agent_id.clone();
        let agent = Arc::new(self.storage.new_runtime(config, &self.options)?);
        self.persist(&agent).await?;
        self.engine.add_agent(agent);
        Ok(agent_id)
    }

    pub fn agent_ids(&self) -> Vec<String> {
        self.engine.agent_ids()
    }

    pub fn agent_view(&self, agent_id: &str) -> Result<AgentView, ServiceError> {
        let agent = self.agent(agent_id)?;
        Ok(AgentView {
            config: agent.config(),
            tools: agent.tools.user_specs(),
            knowledge: StoreKind::ALL
                .into_iter()
                .map(|k| (k.as_str().to_owned(), agent.memory.chunk_count(k)))
                .collect(),
            workflows: agent.workflows.len(),
        })
    }

    pub async fn set_triggers(&self, agent_id: &str, triggers: Vec<Trigger>) -> Result<(), ServiceError> {
        self.engine.update_triggers(agent_id, triggers).await?;
        self.persist(&*self.agent(agent_id)?).await
    }

    /// Imports every operation of an OpenAPI document; all or nothing.
    pub async fn import_tools(
        &self,
        agent_id: &str,
        document: &str,
        base_url: Option<String>,
    ) -> Result<Vec<String>, ServiceError> {
        let agent = self.agent(agent_id)?;
        let specs = import_openapi_with(document, &ImportOptions { base_url })?;
        let ids = agent.import_tools(specs)?;
        self.persist(&agent).await?;
        Ok(ids)
    }

    pub async fn add_knowledge(
        &self,
        agent_id: &str,
        store: StoreKind,
        doc_id: &str,
        text: &str,
    ) -> Result<usize, ServiceError> {
        if doc_id.trim().is_empty() {
            return Err(ServiceError::BadRequest("document name is empty".into()));
        }
        let agent = self.agent(agent_id)?;
        let chunks = agent.memory.ingest_document(store, doc_id, text)?;
        self.persist(&agent).await?;
        Ok(chunks)
    }

    pub fn search(
        &self,
        agent_id: &str,
        store: StoreKind,
        query: &str,
        k: usize,
    ) -> Result<Vec<SearchHit>, ServiceError> {
        Ok(self.agent(agent_id)?.memory.search(store, query, k))
    }

    pub fn start_session(&self, agent_id: &str, mode: SessionMode) -> Result<String, ServiceError> {
        Ok(self.engine.start_session(agent_id, mode)?)
    }

    async fn reply(&self, session_id: &str, outputs: Vec<LayoutPlan>) -> Result<EventReply, ServiceError> {
        let session = self.engine.session_info(session_id).await?;
        let agent = self.agent(&session.agent_id)?;
        self.persist(&agent).await?;
        Ok(EventReply { outputs, session })
    }

    pub async fn submit_event(&self, session_id: &str, event: &InputEvent) -> Result<EventReply, ServiceError> {
        let outputs = self.engine.submit_event(session_id, event).await?;
        self.reply(session_id, outputs).await
    }

    pub async fn apply_feedback(&self, session_id: &str, feedback: &Feedback) -> Result<EventReply, ServiceError> {
        let outputs = self.engine.apply_feedback(session_id, feedback).await?;
        self.reply(session_id, outputs).await
    }

    pub fn export_bundle(&self, agent_id: &str) -> Result<Vec<u8>, ServiceError> {
        Ok(AgentBundle::capture(&*self.agent(agent_id)?).to_bytes())
    }

    /// Materializes a bundle under a fresh agent id.
    pub async fn import_bundle(&self, bytes: &[u8]) -> Result<String, ServiceError> {
        let bundle = AgentBundle::from_bytes(bytes)?;
        let mut config = bundle.config;
        config.agent_id = uuid::Uuid::new_v4().simple().to_string();
        let files: BTreeMap<String, String> = bundle
            .memory_manifest
            .into_iter()
            .map(|f| (f.path, f.contents))
            .collect();
        let memory =
            LongTermMemory::restore_files(self.storage.memory_dir(&config.agent_id), config.memory_policy, &files)
                .map_err(|e| ServiceError::Bundle(BundleError::Malformed(e.to_string())))?;
        let tools = self.options.tool_registry();
        for spec in bundle.tools {
            register_tool(&tools, &memory, spec)?;
        }
        let agent_id = config.agent_id.clone();
        let agent = Arc::new(AgentRuntime::new(
            config,
            tools,
            memory,
            WorkflowStore::from_traces(bundle.workflow_traces),
        ));
        self.persist(&agent).await?;
        self.engine.add_agent(agent);
        Ok(agent_id)
    }
}

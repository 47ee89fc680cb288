//! The session engine and the per-agent runtime it drives.

mod session;
mod trace;
mod workflow;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Arc;

use parking_lot::RwLock;
use thiserror::Error;
use tokio::sync::Mutex;

pub use session::{Feedback, FeedbackSource, FeedbackVerdict, Session, SessionInfo, SessionMode, SessionStatus};
pub use trace::{AttemptRecord, CycleTrace, OutputLog, TraceLog};
pub use workflow::{WorkflowOutcome, WorkflowStore, WorkflowTrace, WORKFLOW_MATCH_THRESHOLD};

use crate::clock::Clock;
use crate::foundation::{ModelRegistry, ProviderError};
use crate::kernel::{validate_agent_config, AgentConfig, Trigger};
use crate::lui::{InputEvent, LayoutPlan};
use crate::memory::LongTermMemory;
use crate::tools::{register_tool, ToolError, ToolRegistry, ToolSpec};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown agent '{0}'")]
    UnknownAgent(String),
    #[error("unknown session '{0}'")]
    UnknownSession(String),
    #[error("session is halted")]
    SessionHalted,
    #[error("feedback requires a self_taught session")]
    WrongMode,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("{0}")]
    Invalid(String),
}

/// Everything one agent owns: configuration, tools, memory and learned
/// workflows. Shared by all of the agent's sessions.
#[derive(Debug)]
pub struct AgentRuntime {
    config: RwLock<AgentConfig>,
    pub tools: ToolRegistry,
    pub memory: LongTermMemory,
    pub workflows: WorkflowStore,
}

impl AgentRuntime {
    pub fn new(config: AgentConfig, tools: ToolRegistry, memory: LongTermMemory, workflows: WorkflowStore) -> Self {
        memory.set_policy(config.memory_policy);
        Self {
            config: RwLock::new(config),
            tools,
            memory,
            workflows,
        }
    }

    pub fn config(&self) -> AgentConfig {
        self.config.read().clone()
    }

    pub fn agent_id(&self) -> String {
        self.config.read().agent_id.clone()
    }

    /// Registers tools, mirrors them into the Tools store and records their
    /// ids in the configuration.
    pub fn import_tools(&self, specs: Vec<ToolSpec>) -> Result<Vec<String>, ToolError> {
        for spec in &specs {
            if self.tools.lookup(&spec.tool_id).is_some() {
                return Err(ToolError::DuplicateToolId(spec.tool_id.clone()));
            }
        }
        let mut ids = Vec::with_capacity(specs.len());
        for spec in specs {
            let id = spec.tool_id.clone();
            register_tool(&self.tools, &self.memory, spec)?;
            ids.push(id);
        }
        let mut config = self.config.write();
        for id in &ids {
            if !config.tool_ids.contains(id) {
                config.tool_ids.push(id.clone());
            }
        }
        Ok(ids)
    }

    /// Replaces the configured triggers after validation.
    pub fn set_triggers(&self, triggers: Vec<Trigger>) -> Result<(), SessionError> {
        let mut candidate = self.config();
        candidate.triggers = triggers;
        let report = validate_agent_config(&candidate);
        if !report.is_valid() {
            let text = report
                .violations
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; ");
            return Err(SessionError::Invalid(text));
        }
        *self.config.write() = candidate;
        Ok(())
    }
}

struct SessionSlot {
    agent_id: String,
    session: Arc<Mutex<Session>>,
    trace: Arc<TraceLog>,
    outputs: Arc<OutputLog>,
}

/// Hosts agents and their sessions. Each session's cycle loop runs under its
/// own lock, so submissions to one session are serialized in arrival order.
pub struct Engine {
    models: Arc<ModelRegistry>,
    clock: Arc<dyn Clock>,
    agents: RwLock<BTreeMap<String, Arc<AgentRuntime>>>,
    sessions: RwLock<HashMap<String, SessionSlot>>,
    replay_dir: Option<PathBuf>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("agents", &self.agents.read().keys().collect::<Vec<_>>())
            .field("sessions", &self.sessions.read().len())
            .finish_non_exhaustive()
    }
}

impl Engine {
    pub fn new(models: Arc<ModelRegistry>, clock: Arc<dyn Clock>) -> Self {
        Self {
            models,
            clock,
            agents: RwLock::new(BTreeMap::new()),
            sessions: RwLock::new(HashMap::new()),
            replay_dir: None,
        }
    }

    /// Each session's traces are also appended to `<dir>/<session_id>.jsonl`.
    pub fn with_replay_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.replay_dir = Some(dir.into());
        self
    }

    pub fn models(&self) -> &Arc<ModelRegistry> {
        &self.models
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn add_agent(&self, agent: Arc<AgentRuntime>) {
        self.agents.write().insert(agent.agent_id(), agent);
    }

    pub fn agent(&self, agent_id: &str) -> Result<Arc<AgentRuntime>, SessionError> {
        self.agents
            .read()
            .get(agent_id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownAgent(agent_id.to_owned()))
    }

    pub fn agent_ids(&self) -> Vec<String> {
        self.agents.read().keys().cloned().collect()
    }

    pub fn start_session(&self, agent_id: &str, mode: SessionMode) -> Result<String, SessionError> {
        let agent = self.agent(agent_id)?;
        let session_id = uuid::Uuid::new_v4().simple().to_string();
        let replay = self
            .replay_dir
            .as_ref()
            .map(|dir| dir.join(format!("{session_id}.jsonl")));
        let trace = Arc::new(TraceLog::new(replay));
        let outputs = Arc::new(OutputLog::default());
        let session = Session::new(
            session_id.clone(),
            mode,
            agent,
            self.models.clone(),
            self.clock.clone(),
            trace.clone(),
            outputs.clone(),
        );
        self.sessions.write().insert(
            session_id.clone(),
            SessionSlot {
                agent_id: agent_id.to_owned(),
                session: Arc::new(Mutex::new(session)),
                trace,
                outputs,
            },
        );
        Ok(session_id)
    }

    pub fn session(&self, session_id: &str) -> Result<Arc<Mutex<Session>>, SessionError> {
        self.sessions
            .read()
            .get(session_id)
            .map(|s| s.session.clone())
            .ok_or_else(|| SessionError::UnknownSession(session_id.to_owned()))
    }

    /// Available without waiting for a running cycle loop.
    pub fn trace(&self, session_id: &str) -> Result<Arc<TraceLog>, SessionError> {
        self.sessions
            .read()
            .get(session_id)
            .map(|s| s.trace.clone())
            .ok_or_else(|| SessionError::UnknownSession(session_id.to_owned()))
    }

    pub fn outputs(&self, session_id: &str) -> Result<Vec<LayoutPlan>, SessionError> {
        self.sessions
            .read()
            .get(session_id)
            .map(|s| s.outputs.all())
            .ok_or_else(|| SessionError::UnknownSession(session_id.to_owned()))
    }

    pub async fn session_info(&self, session_id: &str) -> Result<SessionInfo, SessionError> {
        let session = self.session(session_id)?;
        let info = session.lock().await.info();
        Ok(info)
    }

    pub async fn submit_event(&self, session_id: &str, event: &InputEvent) -> Result<Vec<LayoutPlan>, SessionError> {
        let session = self.session(session_id)?;
        let mut guard = session.lock().await;
        guard.submit_event(event).await
    }

    pub async fn apply_feedback(&self, session_id: &str, feedback: &Feedback) -> Result<Vec<LayoutPlan>, SessionError> {
        let session = self.session(session_id)?;
        let mut guard = session.lock().await;
        guard.apply_feedback(feedback).await
    }

    /// Replaces an agent's triggers and reinstalls them in its live sessions,
    /// each between cycle loops.
    pub async fn update_triggers(&self, agent_id: &str, triggers: Vec<Trigger>) -> Result<(), SessionError> {
        let agent = self.agent(agent_id)?;
        agent.set_triggers(triggers)?;
        let sessions: Vec<Arc<Mutex<Session>>> = self
            .sessions
            .read()
            .values()
            .filter(|s| s.agent_id == agent_id)
            .map(|s| s.session.clone())
            .collect();
        for session in sessions {
            session.lock().await.reinstall_triggers();
        }
        Ok(())
    }

    /// Ingests the session's archived conversation, if any, into memory.
    pub async fn close_session(&self, session_id: &str) -> Result<usize, SessionError> {
        let session = self.session(session_id)?;
        let agent_id = session.lock().await.agent_id.clone();
        let agent = self.agent(&agent_id)?;
        agent
            .memory
            .close_conversation(session_id)
            .map_err(|e| SessionError::Invalid(e.to_string()))
    }
}

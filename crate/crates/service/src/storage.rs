//! Plain-file persistence under the data directory.
//!
//! ```text
//! <root>/agents/<agent_id>/manifest.json     {"format_version": N}
//! <root>/agents/<agent_id>/config.json
//! <root>/agents/<agent_id>/tools.json        user tool specs
//! <root>/agents/<agent_id>/workflows.jsonl
//! <root>/agents/<agent_id>/search_cache.json
//! <root>/agents/<agent_id>/memory/...        long-term memory directory
//! <root>/replay/<session_id>.jsonl
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use mindos_core::clock::Clock;
use mindos_core::kernel::AgentConfig;
use mindos_core::memory::{LongTermMemory, MemoryError};
use mindos_core::net::NetClient;
use mindos_core::orchestrator::{AgentRuntime, WorkflowStore};
use mindos_core::tools::builtin::WebSearch;
use mindos_core::tools::{ToolRegistry, ToolSpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("agent '{0}' not found")]
    NotFound(String),
    #[error("corrupt state in {path}: {reason}")]
    CorruptState { path: String, reason: String },
    #[error("storage i/o: {0}")]
    Io(#[from] io::Error),
}

impl From<MemoryError> for StorageError {
    fn from(e: MemoryError) -> Self {
        match e {
            MemoryError::Io(io) => StorageError::Io(io),
            other => StorageError::CorruptState {
                path: "memory".into(),
                reason: other.to_string(),
            },
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
}

/// Options applied to every agent loaded from disk.
#[derive(Clone)]
pub struct RuntimeOptions {
    pub net: NetClient,
    pub clock: Arc<dyn Clock>,
    pub search_url: Option<String>,
}

impl std::fmt::Debug for RuntimeOptions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RuntimeOptions")
            .field("offline", &self.net.offline())
            .field("search_url", &self.search_url)
            .finish_non_exhaustive()
    }
}

impl RuntimeOptions {
    pub fn tool_registry(&self) -> ToolRegistry {
        let mut search = WebSearch::new(self.net.clone(), self.clock.clone());
        if let Some(url) = &self.search_url {
            search = search.with_backend(url.clone());
        }
        ToolRegistry::with_web_search(self.net.clone(), search)
    }
}

#[derive(Debug, Clone)]
pub struct Storage {
    root: PathBuf,
}

/// Writes via a temporary sibling and a rename.
fn write_atomic(path: &Path, contents: &str) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(tmp, path)
}

fn corrupt(path: &Path, reason: impl ToString) -> StorageError {
    StorageError::CorruptState {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

impl Storage {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("agents"))?;
        fs::create_dir_all(root.join("replay"))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn replay_dir(&self) -> PathBuf {
        self.root.join("replay")
    }

    pub fn agent_dir(&self, agent_id: &str) -> PathBuf {
        self.root.join("agents").join(agent_id)
    }

    pub fn memory_dir(&self, agent_id: &str) -> PathBuf {
        self.agent_dir(agent_id).join("memory")
    }

    /// Agent ids with a stored configuration, sorted.
    pub fn agent_ids(&self) -> io::Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(self.root.join("agents"))? {
            let entry = entry?;
            if entry.path().join("config.json").is_file() {
                if let Some(name) = entry.file_name().to_str() {
                    ids.push(name.to_owned());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// Fresh runtime whose memory lives in the agent's directory.
    pub fn new_runtime(&self, config: AgentConfig, options: &RuntimeOptions) -> Result<AgentRuntime, StorageError> {
        let memory = LongTermMemory::open(self.memory_dir(&config.agent_id), config.memory_policy)?;
        Ok(AgentRuntime::new(
            config,
            options.tool_registry(),
            memory,
            WorkflowStore::default(),
        ))
    }

    /// Writes configuration, tools, workflows and search cache, and flushes
    /// memory. Chunks are already on disk from ingestion.
    pub fn persist_agent(&self, agent: &AgentRuntime) -> Result<(), StorageError> {
        let config = agent.config();
        let dir = self.agent_dir(&config.agent_id);
        fs::create_dir_all(&dir)?;
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
        };
        write_atomic(
            &dir.join("manifest.json"),
            &serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )?;
        write_atomic(&dir.join("config.json"), &config.to_json())?;
        write_atomic(
            &dir.join("tools.json"),
            &serde_json::to_string_pretty(&agent.tools.user_specs()).expect("tools serialize"),
        )?;
        write_atomic(&dir.join("workflows.jsonl"), &agent.workflows.to_jsonl())?;
        agent.tools.web_search().save_cache(&dir.join("search_cache.json"))?;
        agent.memory.flush()?;
        Ok(())
    }

    pub fn load_agent(&self, agent_id: &str, options: &RuntimeOptions) -> Result<AgentRuntime, StorageError> {
        let dir = self.agent_dir(agent_id);
        let config_path = dir.join("config.json");
        if !config_path.is_file() {
            return Err(StorageError::NotFound(agent_id.to_owned()));
        }

        let manifest_path = dir.join("manifest.json");
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(&manifest_path)?).map_err(|e| corrupt(&manifest_path, e))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(corrupt(
                &manifest_path,
                format!("format version {} (expected {FORMAT_VERSION})", manifest.format_version),
            ));
        }

        let config =
            AgentConfig::from_json(&fs::read_to_string(&config_path)?).map_err(|e| corrupt(&config_path, e))?;
        if config.agent_id != agent_id {
            return Err(corrupt(
                &config_path,
                format!("agent_id '{}' in directory '{agent_id}'", config.agent_id),
            ));
        }

        let tools_path = dir.join("tools.json");
        let specs: Vec<ToolSpec> = if tools_path.is_file() {
            serde_json::from_str(&fs::read_to_string(&tools_path)?).map_err(|e| corrupt(&tools_path, e))?
        } else {
            Vec::new()
        };

        let workflows_path = dir.join("workflows.jsonl");
        let workflows = if workflows_path.is_file() {
            WorkflowStore::from_jsonl(&fs::read_to_string(&workflows_path)?).map_err(|e| corrupt(&workflows_path, e))?
        } else {
            WorkflowStore::default()
        };

        let memory = LongTermMemory::open(self.memory_dir(agent_id), config.memory_policy)?;
        let tools = options.tool_registry();
        for spec in specs {
            tools.register(spec).map_err(|e| corrupt(&tools_path, e))?;
        }
        let cache_path = dir.join("search_cache.json");
        if cache_path.is_file() {
            tools.web_search().load_cache(&cache_path)?;
        }
        Ok(AgentRuntime::new(config, tools, memory, workflows))
    }
}

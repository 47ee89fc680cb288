//! Portable agent bundles. Exports are canonical: the agent id is blanked and
//! nothing time-dependent is added, so export → import → export is
//! byte-identical.

use mindos_core::kernel::AgentConfig;
use mindos_core::orchestrator::{AgentRuntime, WorkflowTrace};
use mindos_core::tools::ToolSpec;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BundleError {
    #[error("bundle version {found} is not supported (expected {BUNDLE_VERSION})")]
    VersionUnsupported { found: u64 },
    #[error("malformed bundle: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleFile {
    /// Relative to the agent's memory directory.
    pub path: String,
    pub contents: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentBundle {
    pub version: u32,
    pub config: AgentConfig,
    pub tools: Vec<ToolSpec>,
    /// Sorted by path.
    pub memory_manifest: Vec<BundleFile>,
    pub workflow_traces: Vec<WorkflowTrace>,
}

impl AgentBundle {
    pub fn capture(agent: &AgentRuntime) -> Self {
        let mut config = agent.config();
        config.agent_id = String::new();
        Self {
            version: BUNDLE_VERSION,
            config,
            tools: agent.tools.user_specs(),
            memory_manifest: agent
                .memory
                .render_files()
                .into_iter()
                .map(|(path, contents)| BundleFile { path, contents })
                .collect(),
            workflow_traces: agent.workflows.all(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("bundle serializes");
        bytes.push(b'\n');
        bytes
    }

    /// The version is checked before the rest of the shape.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BundleError> {
        let value: Value = serde_json::from_slice(bytes).map_err(|e| BundleError::Malformed(e.to_string()))?;
        let version = value
            .get("version")
            .and_then(Value::as_u64)
            .ok_or_else(|| BundleError::Malformed("missing integer 'version'".into()))?;
        if version != u64::from(BUNDLE_VERSION) {
            return Err(BundleError::VersionUnsupported { found: version });
        }
        let bundle: AgentBundle = serde_json::from_value(value).map_err(|e| BundleError::Malformed(e.to_string()))?;
        let mut seen = std::collections::BTreeSet::new();
        if !bundle.memory_manifest.iter().all(|f| seen.insert(f.path.as_str())) {
            return Err(BundleError::Malformed("duplicate memory file path".into()));
        }
        Ok(bundle)
    }
}

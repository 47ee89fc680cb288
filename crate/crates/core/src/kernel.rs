//! Shared domain vocabulary: agent configuration, drives, triggers, directives.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const DEFAULT_STEP_LIMIT: u32 = 20;
pub const DEFAULT_RETRIEVAL_K: u32 = 4;

fn default_step_limit() -> u32 {
    DEFAULT_STEP_LIMIT
}

fn default_retrieval_k() -> u32 {
    DEFAULT_RETRIEVAL_K
}

/// User-authorization gates for what the agent may remember about the user.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryPolicy {
    #[serde(default)]
    pub store_user_profile: bool,
    #[serde(default)]
    pub store_conversation: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    #[serde(default)]
    pub agent_id: String,
    pub name: String,
    #[serde(default)]
    pub profile: String,
    #[serde(default)]
    pub drives: Vec<Drive>,
    #[serde(default)]
    pub triggers: Vec<Trigger>,
    #[serde(default)]
    pub tool_ids: Vec<String>,
    #[serde(default)]
    pub memory_policy: MemoryPolicy,
    #[serde(default = "default_step_limit")]
    pub step_limit: u32,
    #[serde(default = "default_retrieval_k")]
    pub retrieval_k: u32,
}

impl AgentConfig {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            agent_id: String::new(),
            name: name.into(),
            profile: String::new(),
            drives: Vec::new(),
            triggers: Vec::new(),
            tool_ids: Vec::new(),
            memory_policy: MemoryPolicy::default(),
            step_limit: DEFAULT_STEP_LIMIT,
            retrieval_k: DEFAULT_RETRIEVAL_K,
        }
    }

    /// Parses the canonical JSON file format. Unknown fields are rejected.
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveKind {
    LongTerm,
    ShortTerm,
    Reactive,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveStatus {
    #[default]
    Active,
    Satisfied,
    Halted,
}

/// A goal record. Reactive drives additionally carry the trigger pattern and
/// the response they fire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Drive {
    pub drive_id: String,
    pub kind: DriveKind,
    #[serde(default)]
    pub prompt_text: String,
    #[serde(default)]
    pub priority: i64,
    #[serde(default)]
    pub status: DriveStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub match_mode: Option<MatchMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
}

impl Drive {
    pub fn long_term(id: impl Into<String>, text: impl Into<String>, priority: i64) -> Self {
        Self::with_kind(id, DriveKind::LongTerm, text, priority)
    }

    pub fn with_kind(id: impl Into<String>, kind: DriveKind, text: impl Into<String>, priority: i64) -> Self {
        Self {
            drive_id: id.into(),
            kind,
            prompt_text: text.into(),
            priority,
            status: DriveStatus::Active,
            pattern: None,
            match_mode: None,
            response: None,
        }
    }

    pub fn reactive(
        id: impl Into<String>,
        pattern: impl Into<String>,
        mode: MatchMode,
        response: impl Into<String>,
    ) -> Self {
        Self {
            pattern: Some(pattern.into()),
            match_mode: Some(mode),
            response: Some(response.into()),
            ..Self::with_kind(id, DriveKind::Reactive, "", 0)
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    Exact,
    #[default]
    Substring,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trigger {
    pub trigger_id: String,
    pub pattern: String,
    #[serde(default)]
    pub mode: MatchMode,
    pub response: String,
    #[serde(default = "enabled_default")]
    pub enabled: bool,
}

fn enabled_default() -> bool {
    true
}

impl Trigger {
    pub fn new(
        id: impl Into<String>,
        pattern: impl Into<String>,
        mode: MatchMode,
        response: impl Into<String>,
    ) -> Self {
        Self {
            trigger_id: id.into(),
            pattern: pattern.into(),
            mode,
            response: response.into(),
            enabled: true,
        }
    }

    /// Whether this trigger fires on the given (raw) perception text.
    pub fn matches(&self, perception: &str) -> bool {
        if !self.enabled {
            return false;
        }
        let pattern = normalize_text(&self.pattern);
        if pattern.is_empty() {
            return false;
        }
        let text = normalize_text(perception);
        match self.mode {
            MatchMode::Exact => text == pattern,
            MatchMode::Substring => text.contains(&pattern),
        }
    }
}

/// The five long-term memory stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreKind {
    AgentProfile,
    UserProfile,
    UserStructured,
    DomainKnowledge,
    Tools,
}

impl StoreKind {
    pub const ALL: [StoreKind; 5] = [
        StoreKind::AgentProfile,
        StoreKind::UserProfile,
        StoreKind::UserStructured,
        StoreKind::DomainKnowledge,
        StoreKind::Tools,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StoreKind::AgentProfile => "agent_profile",
            StoreKind::UserProfile => "user_profile",
            StoreKind::UserStructured => "user_structured",
            StoreKind::DomainKnowledge => "domain_knowledge",
            StoreKind::Tools => "tools",
        }
    }
}

impl fmt::Display for StoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StoreKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StoreKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown store kind '{s}'"))
    }
}

/// One step of a tool pipeline. Argument values may be literals or
/// `${bind.field}` placeholders referring to an earlier step's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainStep {
    #[serde(rename = "tool")]
    pub tool_id: String,
    #[serde(default)]
    pub args: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bind: Option<String>,
}

/// An action the agent may offer alongside a response (rendered as a button).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfferedAction {
    pub label: String,
    pub action_id: String,
}

/// The decision parsed out of one Thought Stream completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Directive {
    Respond {
        text: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        actions: Vec<OfferedAction>,
    },
    InvokeTool {
        #[serde(rename = "tool")]
        tool_id: String,
        args: BTreeMap<String, Value>,
    },
    QueryMemory {
        #[serde(rename = "store")]
        store_kind: StoreKind,
        query: String,
    },
    Plan {
        subgoals: Vec<String>,
    },
    Chain {
        steps: Vec<ChainStep>,
    },
    Finish {
        result: String,
    },
}

impl Directive {
    pub const ACTION_NAMES: [&'static str; 6] = ["respond", "invoke_tool", "query_memory", "plan", "chain", "finish"];

    pub fn respond(text: impl Into<String>) -> Self {
        Directive::Respond {
            text: text.into(),
            actions: Vec::new(),
        }
    }

    pub fn action_name(&self) -> &'static str {
        match self {
            Directive::Respond { .. } => "respond",
            Directive::InvokeTool { .. } => "invoke_tool",
            Directive::QueryMemory { .. } => "query_memory",
            Directive::Plan { .. } => "plan",
            Directive::Chain { .. } => "chain",
            Directive::Finish { .. } => "finish",
        }
    }

    /// Canonical single-line JSON rendering.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("directive serializes")
    }
}

/// Lowercases, trims and collapses internal whitespace runs to one space.
pub fn normalize_text(text: &str) -> String {
    let lowered = text.to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    for word in lowered.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub reason: String,
}

impl Violation {
    fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has_field(&self, field: &str) -> bool {
        self.violations.iter().any(|v| v.field == field)
    }
}

fn blank(text: &str) -> bool {
    text.trim().is_empty()
}

/// Collects every invariant violation in `config`. Never fails.
pub fn validate_agent_config(config: &AgentConfig) -> ValidationReport {
    let mut violations = Vec::new();

    if blank(&config.name) {
        violations.push(Violation::new("name", "empty"));
    }
    if config.step_limit < 1 {
        violations.push(Violation::new("step_limit", "must be at least 1"));
    }
    if config.retrieval_k < 1 {
        violations.push(Violation::new("retrieval_k", "must be at least 1"));
    }

    let mut drive_ids = HashSet::new();
    for (i, drive) in config.drives.iter().enumerate() {
        if blank(&drive.drive_id) {
            violations.push(Violation::new(format!("drives[{i}].drive_id"), "empty"));
        } else if !drive_ids.insert(drive.drive_id.as_str()) {
            violations.push(Violation::new(format!("drives[{i}].drive_id"), "duplicate"));
        }
        match drive.kind {
            DriveKind::Reactive => {
                if drive.pattern.as_deref().is_none_or(blank) {
                    violations.push(Violation::new(format!("drives[{i}].pattern"), "empty"));
                }
                if drive.response.as_deref().is_none_or(blank) {
                    violations.push(Violation::new(format!("drives[{i}].response"), "empty"));
                }
            }
            DriveKind::LongTerm => {
                if drive.status == DriveStatus::Satisfied {
                    violations.push(Violation::new(
                        format!("drives[{i}].status"),
                        "long_term drives cannot be satisfied",
                    ));
                }
                if blank(&drive.prompt_text) {
                    violations.push(Violation::new(format!("drives[{i}].prompt_text"), "empty"));
                }
            }
            DriveKind::ShortTerm => {
                if blank(&drive.prompt_text) {
                    violations.push(Violation::new(format!("drives[{i}].prompt_text"), "empty"));
                }
            }
        }
    }

    let mut trigger_ids = HashSet::new();
    for (i, trigger) in config.triggers.iter().enumerate() {
        if blank(&trigger.trigger_id) {
            violations.push(Violation::new(format!("triggers[{i}].trigger_id"), "empty"));
        } else if !trigger_ids.insert(trigger.trigger_id.as_str()) {
            violations.push(Violation::new(format!("triggers[{i}].trigger_id"), "duplicate"));
        }
        if normalize_text(&trigger.pattern).is_empty() {
            violations.push(Violation::new(format!("triggers[{i}].pattern"), "empty"));
        }
    }

    for (i, tool) in config.tool_ids.iter().enumerate() {
        if blank(tool) {
            violations.push(Violation::new(format!("tool_ids[{i}]"), "empty"));
        }
    }

    ValidationReport { violations }
}

//! Driver System and Monitor.
//!
//! The driver holds the persona-level drives and a stack of task goals; its
//! text is injected as the Thought's instructions. The monitor runs a trigger
//! check before each cycle and a termination / step-threshold / sub-task check
//! after it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{AgentConfig, Directive, Drive, DriveKind, DriveStatus, MatchMode, Trigger};

pub const DEFAULT_INSTRUCTION: &str = "Assist the user.";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DriverError {
    #[error("no current goal matches parent '{0}'")]
    NoCurrentGoal(String),
    #[error("goal stack is empty")]
    EmptyStack,
    #[error("trigger id '{0}' already registered")]
    DuplicateTriggerId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalStatus {
    Current,
    Pending,
    Satisfied,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalRecord {
    pub goal_id: String,
    pub text: String,
    pub parent: Option<String>,
    pub status: GoalStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalStack {
    pub long_term: Vec<Drive>,
    short_term: Vec<GoalRecord>,
    satisfied: Vec<GoalRecord>,
    next_id: u64,
}

impl GoalStack {
    pub fn current(&self) -> Option<&GoalRecord> {
        self.short_term.last()
    }

    pub fn depth(&self) -> usize {
        self.short_term.len()
    }

    pub fn is_empty(&self) -> bool {
        self.short_term.is_empty()
    }

    /// Open goals from the top of the stack down.
    pub fn open_goals(&self) -> impl Iterator<Item = &GoalRecord> {
        self.short_term.iter().rev()
    }

    /// Goals popped as satisfied, in completion order.
    pub fn satisfied(&self) -> &[GoalRecord] {
        &self.satisfied
    }

    fn fresh_id(&mut self) -> String {
        self.next_id += 1;
        format!("g{}", self.next_id)
    }

    fn mark_top_current(&mut self) {
        let len = self.short_term.len();
        for (i, goal) in self.short_term.iter_mut().enumerate() {
            goal.status = if i + 1 == len {
                GoalStatus::Current
            } else {
                GoalStatus::Pending
            };
        }
    }

    /// Replaces the task goals with a single root goal.
    pub fn set_root_goal(&mut self, text: impl Into<String>) -> String {
        self.short_term.clear();
        let goal_id = self.fresh_id();
        self.short_term.push(GoalRecord {
            goal_id: goal_id.clone(),
            text: text.into(),
            parent: None,
            status: GoalStatus::Current,
        });
        goal_id
    }

    pub fn clear_goals(&mut self) {
        self.short_term.clear();
    }

    /// Pushes subgoals so that `goals[0]` becomes current and the rest follow
    /// in plan order.
    pub fn push_subgoals(&mut self, goals: &[String], parent: &str) -> Result<(), DriverError> {
        if self.current().is_none_or(|g| g.goal_id != parent) {
            return Err(DriverError::NoCurrentGoal(parent.to_owned()));
        }
        if goals.is_empty() {
            return Ok(());
        }
        let mut records: Vec<GoalRecord> = goals
            .iter()
            .map(|text| GoalRecord {
                goal_id: self.fresh_id(),
                text: text.clone(),
                parent: Some(parent.to_owned()),
                status: GoalStatus::Pending,
            })
            .collect();
        records.reverse();
        self.short_term.extend(records);
        self.mark_top_current();
        Ok(())
    }

    /// Pops the current goal as satisfied; its predecessor becomes current.
    pub fn complete_current_goal(&mut self) -> Result<GoalRecord, DriverError> {
        let mut goal = self.short_term.pop().ok_or(DriverError::EmptyStack)?;
        goal.status = GoalStatus::Satisfied;
        self.mark_top_current();
        self.satisfied.push(goal.clone());
        Ok(goal)
    }
}

/// Ordered trigger list; the first enabled match wins.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerTable {
    triggers: Vec<Trigger>,
}

impl TriggerTable {
    pub fn len(&self) -> usize {
        self.triggers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triggers.is_empty()
    }

    pub fn triggers(&self) -> &[Trigger] {
        &self.triggers
    }

    pub fn register(&mut self, trigger: Trigger) -> Result<(), DriverError> {
        if self.triggers.iter().any(|t| t.trigger_id == trigger.trigger_id) {
            return Err(DriverError::DuplicateTriggerId(trigger.trigger_id));
        }
        self.triggers.push(trigger);
        Ok(())
    }

    pub fn from_triggers(triggers: impl IntoIterator<Item = Trigger>) -> Result<Self, DriverError> {
        let mut table = Self::default();
        for trigger in triggers {
            table.register(trigger)?;
        }
        Ok(table)
    }
}

/// Long-term drives sorted by priority (highest first, stable); reactive
/// drives and configured triggers become the trigger table.
pub fn install_drives(config: &AgentConfig) -> (GoalStack, TriggerTable) {
    let mut long_term: Vec<Drive> = config
        .drives
        .iter()
        .filter(|d| d.kind == DriveKind::LongTerm)
        .cloned()
        .collect();
    long_term.sort_by_key(|d| std::cmp::Reverse(d.priority));

    let mut table = TriggerTable::default();
    let reactive = config
        .drives
        .iter()
        .filter(|d| d.kind == DriveKind::Reactive)
        .map(|d| Trigger {
            trigger_id: d.drive_id.clone(),
            pattern: d.pattern.clone().unwrap_or_default(),
            mode: d.match_mode.unwrap_or(MatchMode::Substring),
            response: d.response.clone().unwrap_or_default(),
            enabled: d.status == DriveStatus::Active,
        });
    for trigger in reactive.chain(config.triggers.iter().cloned()) {
        // config validation rejects duplicates; a clash here keeps the first
        let _ = table.register(trigger);
    }

    (
        GoalStack {
            long_term,
            ..GoalStack::default()
        },
        table,
    )
}

pub fn compose_instructions(stack: &GoalStack) -> String {
    let mut lines: Vec<String> = stack
        .long_term
        .iter()
        .filter(|d| d.status == DriveStatus::Active && !d.prompt_text.trim().is_empty())
        .map(|d| d.prompt_text.clone())
        .collect();
    if let Some(goal) = stack.current() {
        lines.push(format!("Current goal: {}", goal.text));
    }
    if lines.is_empty() {
        return DEFAULT_INSTRUCTION.to_owned();
    }
    lines.join("\n")
}

/// Pre-cycle trigger match on the perception text.
pub fn check_pre<'a>(table: &'a TriggerTable, perception: &str) -> Option<&'a str> {
    table
        .triggers
        .iter()
        .find(|t| t.matches(perception))
        .map(|t| t.response.as_str())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HaltReason {
    Finished,
    StepLimit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum MonitorVerdict {
    Continue,
    Bypass { response: String },
    SpawnSubgoals { goals: Vec<String> },
    Halt { reason: HaltReason },
}

/// Termination, then sub-task, then step threshold.
pub fn check_post(directive: &Directive, step_count: u32, step_limit: u32) -> MonitorVerdict {
    match directive {
        Directive::Finish { .. } => MonitorVerdict::Halt {
            reason: HaltReason::Finished,
        },
        Directive::Plan { subgoals } => MonitorVerdict::SpawnSubgoals {
            goals: subgoals.clone(),
        },
        _ if step_count >= step_limit => MonitorVerdict::Halt {
            reason: HaltReason::StepLimit,
        },
        _ => MonitorVerdict::Continue,
    }
}

//! Short-term event store and the Global Context that turns it into a Thought.

use std::collections::VecDeque;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_CAPACITY: usize = 64;
/// Per-section character budget for dialog context and history.
pub const SECTION_BUDGET: usize = 4000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorkingMemoryError {
    #[error("event seq {seq} does not exceed stored max {max}")]
    SeqRegression { seq: u64, max: u64 },
    #[error("thought instructions are empty")]
    EmptyInstructions,
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    AgentAction,
    UserAction,
    Conversation,
    SceneInfo,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::AgentAction => "agent_action",
            EventKind::UserAction => "user_action",
            EventKind::Conversation => "conversation",
            EventKind::SceneInfo => "scene_info",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    Agent,
    User,
    System,
}

impl Actor {
    pub fn as_str(self) -> &'static str {
        match self {
            Actor::Agent => "agent",
            Actor::User => "user",
            Actor::System => "system",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    pub seq: u64,
    pub kind: EventKind,
    pub actor: Actor,
    pub payload: String,
    pub timestamp: DateTime<Utc>,
}

/// Bounded FIFO of session events; the oldest event is evicted first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShortTermStore {
    capacity: usize,
    events: VecDeque<EventRecord>,
}

impl Default for ShortTermStore {
    fn default() -> Self {
        Self::new(DEFAULT_CAPACITY)
    }
}

impl ShortTermStore {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "short-term capacity must be positive");
        Self {
            capacity,
            events: VecDeque::with_capacity(capacity.min(1024)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn events(&self) -> impl Iterator<Item = &EventRecord> {
        self.events.iter()
    }

    pub fn max_seq(&self) -> Option<u64> {
        self.events.back().map(|e| e.seq)
    }

    pub fn record_event(&mut self, event: EventRecord) -> Result<(), WorkingMemoryError> {
        if let Some(max) = self.max_seq() {
            if event.seq <= max {
                return Err(WorkingMemoryError::SeqRegression { seq: event.seq, max });
            }
        }
        self.events.push_back(event);
        while self.events.len() > self.capacity {
            self.events.pop_front();
        }
        Ok(())
    }

    /// Records an event with the next sequence number.
    pub fn push(&mut self, kind: EventKind, actor: Actor, payload: impl Into<String>, timestamp: DateTime<Utc>) -> u64 {
        let seq = self.max_seq().map_or(0, |s| s + 1);
        self.record_event(EventRecord {
            seq,
            kind,
            actor,
            payload: payload.into(),
            timestamp,
        })
        .expect("next seq is always greater");
        seq
    }

    /// JSON array of the stored events.
    pub fn snapshot(&self) -> String {
        serde_json::to_string(&self.events).expect("events serialize")
    }

    pub fn restore(blob: &str) -> Result<Self, WorkingMemoryError> {
        Self::restore_with_capacity(blob, DEFAULT_CAPACITY)
    }

    pub fn restore_with_capacity(blob: &str, capacity: usize) -> Result<Self, WorkingMemoryError> {
        let events: Vec<EventRecord> =
            serde_json::from_str(blob).map_err(|e| WorkingMemoryError::CorruptSnapshot(e.to_string()))?;
        if events.len() > capacity {
            return Err(WorkingMemoryError::CorruptSnapshot(format!(
                "{} events exceed capacity {capacity}",
                events.len()
            )));
        }
        let mut store = Self::new(capacity);
        for event in events {
            store
                .record_event(event)
                .map_err(|e| WorkingMemoryError::CorruptSnapshot(e.to_string()))?;
        }
        Ok(store)
    }
}

/// The structured prompt: eight sections in fixed order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thought {
    pub instructions: String,
    pub dialog_context: Option<String>,
    pub perception: Option<String>,
    pub user_profile: Option<String>,
    pub agent_profile: Option<String>,
    pub related_memory: Option<String>,
    pub history: Option<String>,
    pub date: DateTime<Utc>,
}

pub const SECTION_NAMES: [&str; 8] = [
    "Instructions",
    "Dialog Context",
    "Perception",
    "User Profile",
    "Agent Profile",
    "Related Memory",
    "History",
    "Date",
];

/// Inputs to [`assemble_thought`] that do not come from the event store.
#[derive(Debug, Clone, Default)]
pub struct ThoughtInputs<'a> {
    pub instructions: &'a str,
    pub perception: Option<&'a str>,
    pub user_profile: Option<&'a str>,
    pub agent_profile: Option<&'a str>,
    pub related_memory: &'a [String],
}

fn present(text: Option<&str>) -> Option<String> {
    text.filter(|t| !t.trim().is_empty()).map(str::to_owned)
}

/// Keeps the newest lines whose joined length fits the budget. The newest line
/// is always kept.
fn keep_recent(lines: Vec<String>, budget: usize) -> Option<String> {
    let mut used = 0usize;
    let mut start = lines.len();
    for (i, line) in lines.iter().enumerate().rev() {
        let cost = line.chars().count() + usize::from(start != lines.len());
        if start != lines.len() && used + cost > budget {
            break;
        }
        used += cost;
        start = i;
    }
    if start == lines.len() {
        return None;
    }
    Some(lines[start..].join("\n"))
}

pub fn assemble_thought(
    store: &ShortTermStore,
    inputs: &ThoughtInputs<'_>,
    now: DateTime<Utc>,
) -> Result<Thought, WorkingMemoryError> {
    if inputs.instructions.trim().is_empty() {
        return Err(WorkingMemoryError::EmptyInstructions);
    }

    let mut dialog = Vec::new();
    let mut history = Vec::new();
    for event in store.events() {
        match event.kind {
            EventKind::Conversation => dialog.push(format!("{}: {}", event.actor.as_str(), event.payload)),
            EventKind::AgentAction | EventKind::UserAction => {
                history.push(format!("[{}] {}", event.kind.as_str(), event.payload))
            }
            EventKind::SceneInfo => {}
        }
    }

    let related: Vec<&str> = inputs
        .related_memory
        .iter()
        .map(String::as_str)
        .filter(|t| !t.trim().is_empty())
        .collect();

    Ok(Thought {
        instructions: inputs.instructions.to_owned(),
        dialog_context: keep_recent(dialog, SECTION_BUDGET),
        perception: present(inputs.perception),
        user_profile: present(inputs.user_profile),
        agent_profile: present(inputs.agent_profile),
        related_memory: (!related.is_empty()).then(|| related.join("\n\n")),
        history: keep_recent(history, SECTION_BUDGET),
        date: now,
    })
}

pub fn format_date(date: DateTime<Utc>) -> String {
    date.to_rfc3339_opts(SecondsFormat::Secs, true)
}

impl Thought {
    pub fn sections(&self) -> [(&'static str, Option<String>); 8] {
        [
            (SECTION_NAMES[0], Some(self.instructions.clone())),
            (SECTION_NAMES[1], self.dialog_context.clone()),
            (SECTION_NAMES[2], self.perception.clone()),
            (SECTION_NAMES[3], self.user_profile.clone()),
            (SECTION_NAMES[4], self.agent_profile.clone()),
            (SECTION_NAMES[5], self.related_memory.clone()),
            (SECTION_NAMES[6], self.history.clone()),
            (SECTION_NAMES[7], Some(format_date(self.date))),
        ]
    }
}

pub fn serialize_thought(thought: &Thought) -> String {
    let mut out = String::new();
    for (name, body) in thought.sections() {
        let Some(body) = body else { continue };
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str("## ");
        out.push_str(name);
        out.push('\n');
        out.push_str(&body);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn at(secs: i64) -> DateTime<Utc> {
        Utc.timestamp_opt(1_677_628_800 + secs, 0).unwrap()
    }

    fn event(seq: u64) -> EventRecord {
        EventRecord {
            seq,
            kind: EventKind::AgentAction,
            actor: Actor::Agent,
            payload: format!("e{seq}"),
            timestamp: at(seq as i64),
        }
    }

    #[test]
    fn eviction_is_oldest_first() {
        let mut store = ShortTermStore::new(2);
        store.record_event(event(1)).unwrap();
        assert_eq!(store.len(), 1);
        store.record_event(event(2)).unwrap();
        store.record_event(event(3)).unwrap();
        let seqs: Vec<u64> = store.events().map(|e| e.seq).collect();
        assert_eq!(seqs, vec![2, 3]);
    }

    #[test]
    fn seq_regression_rejected() {
        let mut store = ShortTermStore::new(4);
        store.record_event(event(5)).unwrap();
        assert_eq!(
            store.record_event(event(5)),
            Err(WorkingMemoryError::SeqRegression { seq: 5, max: 5 })
        );
        assert!(store.record_event(event(2)).is_err());
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn minimal_thought_serializes() {
        let thought = Thought {
            instructions: "Greet the user.".into(),
            dialog_context: None,
            perception: None,
            user_profile: None,
            agent_profile: None,
            related_memory: None,
            history: None,
            date: at(0),
        };
        assert_eq!(
            serialize_thought(&thought),
            "## Instructions\nGreet the user.\n\n## Date\n2023-03-01T00:00:00Z\n"
        );
    }

    #[test]
    fn dialog_context_in_arrival_order() {
        let mut store = ShortTermStore::default();
        store.push(EventKind::Conversation, Actor::User, "hello", at(1));
        store.push(EventKind::Conversation, Actor::Agent, "hi there", at(2));
        let inputs = ThoughtInputs {
            instructions: "Assist the user.",
            ..Default::default()
        };
        let thought = assemble_thought(&store, &inputs, at(3)).unwrap();
        assert_eq!(thought.dialog_context.as_deref(), Some("user: hello\nagent: hi there"));
        assert!(thought.perception.is_none());
        assert!(thought.user_profile.is_none());
        assert!(thought.agent_profile.is_none());
        assert!(thought.related_memory.is_none());
        assert!(thought.history.is_none());
    }

    #[test]
    fn history_matches_sorted_oracle() {
        let mut store = ShortTermStore::default();
        for (seq, payload) in [(3u64, "c"), (7, "a"), (9, "b")] {
            store
                .record_event(EventRecord {
                    seq,
                    kind: EventKind::AgentAction,
                    actor: Actor::Agent,
                    payload: payload.into(),
                    timestamp: at(0),
                })
                .unwrap();
        }
        let mut oracle: Vec<&EventRecord> = store.events().collect();
        oracle.sort_by_key(|e| e.seq);
        let expected: Vec<String> = oracle.iter().map(|e| format!("[agent_action] {}", e.payload)).collect();
        let inputs = ThoughtInputs {
            instructions: "x",
            ..Default::default()
        };
        let thought = assemble_thought(&store, &inputs, at(0)).unwrap();
        assert_eq!(thought.history.unwrap(), expected.join("\n"));
    }

    #[test]
    fn empty_instructions_rejected() {
        let inputs = ThoughtInputs {
            instructions: "  ",
            ..Default::default()
        };
        assert_eq!(
            assemble_thought(&ShortTermStore::default(), &inputs, at(0)),
            Err(WorkingMemoryError::EmptyInstructions)
        );
    }

    #[test]
    fn long_history_keeps_newest_within_budget() {
        let mut store = ShortTermStore::new(200);
        for i in 0..150 {
            store.push(EventKind::UserAction, Actor::User, "x".repeat(50), at(i));
        }
        let inputs = ThoughtInputs {
            instructions: "x",
            ..Default::default()
        };
        let history = assemble_thought(&store, &inputs, at(0)).unwrap().history.unwrap();
        assert!(history.chars().count() <= SECTION_BUDGET);
        // each line is "[user_action] " + 50 chars = 64, plus a newline
        assert_eq!(history.lines().count(), (SECTION_BUDGET + 1) / 65);
    }

    #[test]
    fn oversized_single_line_still_kept() {
        let lines = vec!["a".repeat(10), "b".repeat(SECTION_BUDGET + 5)];
        assert_eq!(keep_recent(lines, SECTION_BUDGET), Some("b".repeat(SECTION_BUDGET + 5)));
    }

    #[test]
    fn snapshot_round_trips() {
        let empty = ShortTermStore::default();
        assert_eq!(ShortTermStore::restore(&empty.snapshot()).unwrap(), empty);

        let mut full = ShortTermStore::default();
        for i in 0..(DEFAULT_CAPACITY as u64 + 10) {
            full.record_event(event(i)).unwrap();
        }
        assert_eq!(full.len(), DEFAULT_CAPACITY);
        assert_eq!(ShortTermStore::restore(&full.snapshot()).unwrap(), full);

        let blob = full.snapshot();
        assert!(matches!(
            ShortTermStore::restore(&blob[..blob.len() / 2]),
            Err(WorkingMemoryError::CorruptSnapshot(_))
        ));
    }

    proptest! {
        #[test]
        fn store_keeps_last_capacity_events(capacity in 1usize..10, n in 0usize..40) {
            let mut store = ShortTermStore::new(capacity);
            let mut all = Vec::new();
            for i in 0..n as u64 {
                store.record_event(event(i)).unwrap();
                all.push(event(i));
            }
            let suffix = &all[all.len().saturating_sub(capacity)..];
            let kept: Vec<EventRecord> = store.events().cloned().collect();
            prop_assert_eq!(kept.as_slice(), suffix);
        }

        #[test]
        fn serialized_thought_starts_with_instructions_ends_with_date(
            instructions in "[a-z][a-z ]{0,20}",
            perception in prop::option::of("[a-z ]{0,20}"),
            memories in prop::collection::vec("[a-z ]{0,10}", 0..3),
            secs in 0i64..1_000_000,
        ) {
            let inputs = ThoughtInputs {
                instructions: &instructions,
                perception: perception.as_deref(),
                related_memory: &memories,
                ..Default::default()
            };
            let thought = assemble_thought(&ShortTermStore::default(), &inputs, at(secs)).unwrap();
            let text = serialize_thought(&thought);
            prop_assert!(text.starts_with("## Instructions\n"));
            let tail = format!("## Date\n{}\n", format_date(at(secs)));
            prop_assert!(text.ends_with(&tail));
            prop_assert_eq!(serialize_thought(&thought), text);
        }
    }
}

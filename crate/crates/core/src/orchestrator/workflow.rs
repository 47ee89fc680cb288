//! Learned workflows: successful directive sequences keyed by goal embedding.

use std::sync::atomic::{AtomicU64, Ordering};

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::kernel::Directive;
use crate::memory::cosine;

/// Minimum goal similarity for a stored workflow to be recalled.
pub const WORKFLOW_MATCH_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkflowOutcome {
    Success,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowTrace {
    pub trace_id: String,
    pub goal_text: String,
    pub goal_vector: Vec<f64>,
    pub steps: Vec<Directive>,
    pub outcome: WorkflowOutcome,
    pub created_at: DateTime<Utc>,
}

impl WorkflowTrace {
    /// Summary injected into Related Memory.
    pub fn render(&self, score: f64) -> String {
        let mut text = format!(
            "Learned workflow (similarity {score:.2}) for goal \"{}\":",
            self.goal_text
        );
        if self.steps.is_empty() {
            text.push_str("\n(answered directly)");
        }
        for (i, step) in self.steps.iter().enumerate() {
            text.push_str(&format!("\n{}. {}", i + 1, step.to_json()));
        }
        text
    }
}

#[derive(Debug, Default)]
pub struct WorkflowStore {
    traces: RwLock<Vec<WorkflowTrace>>,
    next_id: AtomicU64,
}

impl WorkflowStore {
    pub fn from_traces(traces: Vec<WorkflowTrace>) -> Self {
        let next = traces.len() as u64;
        Self {
            traces: RwLock::new(traces),
            next_id: AtomicU64::new(next),
        }
    }

    pub fn next_trace_id(&self) -> String {
        format!("wf-{}", self.next_id.fetch_add(1, Ordering::SeqCst) + 1)
    }

    pub fn add(&self, trace: WorkflowTrace) {
        self.traces.write().push(trace);
    }

    pub fn all(&self) -> Vec<WorkflowTrace> {
        self.traces.read().clone()
    }

    pub fn len(&self) -> usize {
        self.traces.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.read().is_empty()
    }

    /// Traces whose goal similarity clears the threshold, best first.
    pub fn recall(&self, goal_vector: &[f64], k: usize) -> Vec<(f64, WorkflowTrace)> {
        let traces = self.traces.read();
        let mut scored: Vec<(f64, WorkflowTrace)> = traces
            .iter()
            .map(|t| (cosine(goal_vector, &t.goal_vector), t))
            .filter(|(score, _)| *score >= WORKFLOW_MATCH_THRESHOLD)
            .map(|(score, t)| (score, t.clone()))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        scored.truncate(k);
        scored
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for trace in self.traces.read().iter() {
            out.push_str(&serde_json::to_string(trace).expect("trace serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let traces = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_traces(traces))
    }
}

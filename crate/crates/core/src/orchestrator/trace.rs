//! Append-only per-session logs: cycle traces (with live subscription) and
//! emitted layout plans.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;

use futures::stream::{self, Stream};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::driver::MonitorVerdict;
use crate::kernel::Directive;
use crate::lui::LayoutPlan;
use crate::thought_stream::ParseError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub completion: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ParseError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleTrace {
    pub cycle_index: u64,
    #[serde(default)]
    pub perception: Option<String>,
    #[serde(default)]
    pub thought_text: Option<String>,
    #[serde(default)]
    pub directive: Option<Directive>,
    pub verdict: MonitorVerdict,
    pub effects: Vec<String>,
    /// Every provider call made by the cycle, repairs included.
    #[serde(default)]
    pub attempts: Vec<AttemptRecord>,
    pub step_count: u32,
    pub step_limit: u32,
    /// Open goals, current first.
    #[serde(default)]
    pub goal_stack: Vec<String>,
}

impl CycleTrace {
    pub fn provider_calls(&self) -> usize {
        self.attempts.len()
    }
}

const CHANNEL_CAPACITY: usize = 256;

#[derive(Debug)]
pub struct TraceLog {
    entries: Mutex<Vec<CycleTrace>>,
    tx: broadcast::Sender<CycleTrace>,
    replay_file: Option<PathBuf>,
}

impl Default for TraceLog {
    fn default() -> Self {
        Self::new(None)
    }
}

impl TraceLog {
    /// With a replay file, every appended trace is also written there as one
    /// JSON line.
    pub fn new(replay_file: Option<PathBuf>) -> Self {
        let (tx, _) = broadcast::channel(CHANNEL_CAPACITY);
        Self {
            entries: Mutex::new(Vec::new()),
            tx,
            replay_file,
        }
    }

    pub fn next_index(&self) -> u64 {
        self.entries.lock().len() as u64
    }

    pub fn append(&self, trace: CycleTrace) {
        let mut entries = self.entries.lock();
        debug_assert_eq!(trace.cycle_index, entries.len() as u64);
        if let Some(path) = &self.replay_file {
            let written = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .and_then(|mut f| {
                    let line = serde_json::to_string(&trace).expect("trace serializes");
                    writeln!(f, "{line}")
                });
            if let Err(e) = written {
                tracing::warn!(path = %path.display(), "replay log write failed: {e}");
            }
        }
        entries.push(trace.clone());
        // no receivers is fine
        let _ = self.tx.send(trace);
    }

    pub fn snapshot(&self) -> Vec<CycleTrace> {
        self.entries.lock().clone()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.lock().is_empty()
    }

    /// Backlog and live receiver taken atomically with respect to appends.
    pub fn subscribe(&self) -> (Vec<CycleTrace>, broadcast::Receiver<CycleTrace>) {
        let entries = self.entries.lock();
        (entries.clone(), self.tx.subscribe())
    }

    /// Full backlog first, then live traces, in index order with no gaps or
    /// duplicates. Ends when the log is dropped.
    pub fn stream(self: std::sync::Arc<Self>) -> impl Stream<Item = CycleTrace> + Send + 'static {
        let (backlog, rx) = self.subscribe();
        let state = (self, rx, std::collections::VecDeque::from(backlog), 0u64);
        stream::unfold(state, |(log, mut rx, mut queue, mut next)| async move {
            loop {
                if let Some(trace) = queue.pop_front() {
                    if trace.cycle_index < next {
                        continue;
                    }
                    next = trace.cycle_index + 1;
                    return Some((trace, (log, rx, queue, next)));
                }
                match rx.recv().await {
                    Ok(trace) if trace.cycle_index < next => continue,
                    Ok(trace) if trace.cycle_index == next => queue.push_back(trace),
                    Ok(_) | Err(broadcast::error::RecvError::Lagged(_)) => {
                        let entries = log.entries.lock();
                        queue.extend(entries.iter().skip(next as usize).cloned());
                    }
                    Err(broadcast::error::RecvError::Closed) => return None,
                }
            }
        })
    }
}

#[derive(Debug, Default)]
pub struct OutputLog {
    plans: Mutex<Vec<LayoutPlan>>,
}

impl OutputLog {
    pub fn push(&self, plan: LayoutPlan) {
        self.plans.lock().push(plan);
    }

    pub fn len(&self) -> usize {
        self.plans.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.plans.lock().is_empty()
    }

    pub fn all(&self) -> Vec<LayoutPlan> {
        self.plans.lock().clone()
    }

    pub fn since(&self, start: usize) -> Vec<LayoutPlan> {
        self.plans.lock().iter().skip(start).cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use futures::StreamExt;
    use std::sync::Arc;

    fn trace(i: u64) -> CycleTrace {
        CycleTrace {
            cycle_index: i,
            perception: None,
            thought_text: None,
            directive: None,
            verdict: MonitorVerdict::Continue,
            effects: vec![],
            attempts: vec![],
            step_count: i as u32,
            step_limit: 20,
            goal_stack: vec![],
        }
    }

    #[tokio::test]
    async fn late_subscriber_gets_backlog_then_live() {
        let log = Arc::new(TraceLog::default());
        log.append(trace(0));
        log.append(trace(1));
        let mut stream = Box::pin(log.clone().stream());
        assert_eq!(stream.next().await.unwrap().cycle_index, 0);
        assert_eq!(stream.next().await.unwrap().cycle_index, 1);
        log.append(trace(2));
        assert_eq!(stream.next().await.unwrap().cycle_index, 2);
    }

    #[tokio::test]
    async fn lagging_subscriber_recovers_from_log() {
        let log = Arc::new(TraceLog::default());
        let mut stream = Box::pin(log.clone().stream());
        for i in 0..(CHANNEL_CAPACITY as u64 + 50) {
            log.append(trace(i));
        }
        for i in 0..(CHANNEL_CAPACITY as u64 + 50) {
            assert_eq!(stream.next().await.unwrap().cycle_index, i);
        }
    }

    #[test]
    fn replay_file_gets_one_line_per_trace() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        let log = TraceLog::new(Some(path.clone()));
        log.append(trace(0));
        log.append(trace(1));
        let text = std::fs::read_to_string(path).unwrap();
        let parsed: Vec<CycleTrace> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(parsed, log.snapshot());
    }
}
